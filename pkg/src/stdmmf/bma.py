"""Bi-modal attention from the two highest levels of both streams."""
import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .layers import CBR, resize


class StreamAttention(nn.Module):
    """High-level fusion map of one stream, scaled by that stream's weight sum."""

    def __init__(self, l4_channels, l5_channels, channels=64):
        super().__init__()
        self.reduce4 = CBR(l4_channels, channels)
        self.reduce5 = CBR(l5_channels, channels)
        self.fuse = CBR(2 * channels, 1)

    def fused(self, l4, l5, target_size):
        if target_size[0] < l4.shape[-2] or target_size[1] < l4.shape[-1]:
            raise ShapeError(f"target {tuple(target_size)} is smaller than level 4 {tuple(l4.shape[-2:])}")
        a = self.reduce4(l4)
        b = resize(self.reduce5(l5), a.shape[-2:])
        return resize(self.fuse(torch.cat([a, b], dim=1)), target_size)

    def forward(self, l4, l5, weight_sum, target_size):
        s_cat = self.fused(l4, l5, target_size)
        return s_cat * _per_sample(weight_sum, s_cat)


def _per_sample(w, like):
    w = torch.as_tensor(w, dtype=like.dtype, device=like.device)
    if w.dim() == 1:
        w = w.view(-1, 1, 1, 1)
    return w


def stream_attention(l4, l5, weight_sum, target_size, module):
    return module(l4, l5, weight_sum, target_size)


def bimodal_attention(s_att, t_att, weight_total):
    """``sigmoid((s_att + t_att) / weight_total)``."""
    total = torch.as_tensor(weight_total, dtype=s_att.dtype, device=s_att.device)
    if bool((total <= 0).any()):
        raise ConfigError("weight_total", f"must be > 0, got {total.tolist()}")
    return torch.sigmoid((s_att + t_att) / _per_sample(total, s_att))
