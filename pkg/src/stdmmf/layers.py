"""Shared building blocks: CBR blocks, resizing and parameter initialization."""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_norm(channels):
    return nn.BatchNorm2d(channels, eps=BN_EPS, momentum=BN_MOMENTUM)


class CBR(nn.Sequential):
    """Convolution (no bias) -> BatchNorm -> ReLU with same-padding."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1, relu=True):
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        padding = tuple(dilation * (k - 1) // 2 for k in kernel_size)
        layers = [
            nn.Conv2d(in_channels, out_channels, kernel_size, padding=padding,
                      dilation=dilation, bias=False),
            batch_norm(out_channels),
        ]
        if relu:
            layers.append(nn.ReLU(inplace=False))
        super().__init__(*layers)


def resize(x, size):
    """Bilinear resize with ``align_corners=False``; identity when already sized.

    Sample positions follow the half-pixel convention: output pixel ``j`` reads
    input coordinate ``(j + 0.5) * in / out - 0.5`` (clamped at 0).
    """
    size = tuple(int(s) for s in size)
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def init_parameters(module, generator=None):
    """Conv weights ~ N(0, 2 / fan_in); conv biases 0; BN scale 1, shift 0.

    Running statistics are reset too, so the result depends only on the generator.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels // m.groups * math.prod(m.kernel_size)
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                noise = torch.randn(m.weight.shape, generator=generator, dtype=torch.float64)
                m.weight.copy_(noise * std)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_running_stats()
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
    return module


def zero_parameters(module):
    """Set every parameter to zero (used for sigmoid(0) = 0.5 sanity checks)."""
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module
