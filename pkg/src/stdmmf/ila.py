"""Inter-layer attention between adjacent pyramid levels."""
import torch
import torch.nn as nn

from .errors import ShapeError
from .layers import CBR, batch_norm, resize

REFINE_CHANNELS = 64


class MultiKernelRefine(nn.Module):
    """Four parallel kernel combinations, concatenated, compressed to 64 channels.

    branch0: 1x1
    branch1: 1x1 -> 1x3 -> 3x1 -> 3x3
    branch2: 1x1 -> 1x5 -> 5x1 -> 3x3
    branch3: 1x1 -> 1x7 -> 7x1 -> 3x3

    output = ReLU(BN(conv(cat(x0..x3))) + x0)
    """

    def __init__(self, in_channels, channels=REFINE_CHANNELS):
        super().__init__()
        self.branch0 = CBR(in_channels, channels, 1)
        branches = []
        for k in (3, 5, 7):
            branches.append(nn.Sequential(
                CBR(in_channels, channels, 1),
                CBR(channels, channels, (1, k)),
                CBR(channels, channels, (k, 1)),
                CBR(channels, channels, 3),
            ))
        self.branch1, self.branch2, self.branch3 = branches
        self.compress = nn.Sequential(
            nn.Conv2d(4 * channels, channels, 3, padding=1, bias=False),
            batch_norm(channels),
        )
        self.relu = nn.ReLU(inplace=False)

    def forward(self, f):
        x0 = self.branch0(f)
        x_cat = torch.cat([x0, self.branch1(f), self.branch2(f), self.branch3(f)], dim=1)
        return self.relu(self.compress(x_cat) + x0)


def multi_kernel_refine(f, module):
    return module(f)


class InterLayerAttention(nn.Module):
    """Single-channel attention for level ``i`` from features ``f_i`` and ``f_{i+1}``."""

    def __init__(self, low_channels, high_channels, channels=REFINE_CHANNELS):
        super().__init__()
        self.refine_low = MultiKernelRefine(low_channels, channels)
        self.refine_high = MultiKernelRefine(high_channels, channels)
        self.align = nn.Conv2d(channels, channels, 1)
        self.project = nn.Conv2d(channels, channels, 1)
        self.head = nn.Conv2d(2 * channels, 1, 3, padding=1)

    def logits(self, f_low, f_high):
        if f_high.shape[-2] > f_low.shape[-2] or f_high.shape[-1] > f_low.shape[-1]:
            raise ShapeError(
                f"higher level {tuple(f_high.shape[-2:])} is larger than lower level {tuple(f_low.shape[-2:])}")
        low = self.refine_low(f_low)
        high = resize(self.refine_high(f_high), low.shape[-2:])
        x_a = self.align(high)
        x_ap = x_a * low
        return self.head(torch.cat([x_ap, self.project(x_a)], dim=1))

    def forward(self, f_low, f_high):
        return torch.sigmoid(self.logits(f_low, f_high))


def attention(f_low, f_high, module):
    return module(f_low, f_high)


def build_ila_stack(level_channels):
    """One attention module per adjacent pair (f1,f2) .. (f4,f5)."""
    return nn.ModuleList(
        InterLayerAttention(level_channels[i], level_channels[i + 1]) for i in range(4))


def apply_attention(x, a):
    """``x * a + x`` with ``a`` broadcast over channels."""
    if a.shape[-2:] != x.shape[-2:]:
        raise ShapeError(f"attention {tuple(a.shape[-2:])} does not match feature {tuple(x.shape[-2:])}")
    if a.shape[-3] != 1:
        raise ShapeError(f"attention must have 1 channel, got {a.shape[-3]}")
    return x * a + x
