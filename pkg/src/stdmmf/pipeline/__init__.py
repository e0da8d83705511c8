from .checkpoint import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .config import TrainConfig, load_config, parse_config
from .data import SaliencySample, load_dataset
from .evaluate import evaluate
from .infer import infer
from .model import STDMMFNet, build_model, forward_full
from .train import train
