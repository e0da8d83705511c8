"""Two-stream (frame + optical flow) salient object detection for panoramic video."""
from .encoders import BackboneConfig, build_backbone, extract_pyramid, spatial_forward, temporal_forward
from .errors import CheckpointError, ConfigError, DataError, ShapeError, TrainingDiverged

__version__ = "0.1.0"
