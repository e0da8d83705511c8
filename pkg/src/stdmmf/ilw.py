"""Inter-layer weights: per-level salient-content descriptors for each stream."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .layers import CBR, resize

NUM_LEVELS = 5


class StreamDescriptor(nn.Module):
    """Maps the five levels of one stream to five nonnegative scalars."""

    def __init__(self, level_channels, channels=64):
        super().__init__()
        if len(level_channels) != NUM_LEVELS:
            raise ConfigError("level_channels", f"expected {NUM_LEVELS} levels, got {len(level_channels)}")
        self.reduce = nn.ModuleList(CBR(c, channels) for c in level_channels)
        self.fuse = CBR(NUM_LEVELS * channels, NUM_LEVELS)

    def interlayer_map(self, levels):
        """The (N, 5, h, w) map before pooling, at level-1 resolution."""
        if len(levels) != NUM_LEVELS:
            raise ConfigError("levels", f"expected {NUM_LEVELS} levels, got {len(levels)}")
        size = levels[0].shape[-2:]
        parts = [resize(conv(x), size) for conv, x in zip(self.reduce, levels)]
        return self.fuse(torch.cat(parts, dim=1))

    def forward(self, levels):
        return self.interlayer_map(levels).mean(dim=(-2, -1))


def stream_descriptor(levels, module):
    return module(levels)


def interlayer_weight(ws, wt):
    """Softmax over the (spatial, temporal) pair of every level.

    ``ws``/``wt`` are (..., 5); the result is (..., 5, 2) with column 0 spatial.
    """
    return F.softmax(torch.stack([ws, wt], dim=-1), dim=-1)


def fixed_weight(batch, spatial, temporal, like):
    """Constant weight table used when the weighting module is ablated."""
    row = torch.tensor([spatial, temporal], dtype=like.dtype, device=like.device)
    return row.expand(batch, NUM_LEVELS, 2).clone()
