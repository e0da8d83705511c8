import pytest
import torch

from stdmmf.encoders import BackboneConfig
from stdmmf.pipeline.config import TrainConfig


@pytest.fixture(autouse=True)
def _deterministic():
    torch.set_num_threads(1)
    torch.manual_seed(0)
    yield
    torch.use_deterministic_algorithms(False)


@pytest.fixture
def tiny_config():
    return BackboneConfig.tiny()


@pytest.fixture
def tiny_train_config():
    return TrainConfig(backbone="tiny", input_size=32, epochs=1)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)
