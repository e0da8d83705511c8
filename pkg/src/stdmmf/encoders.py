"""Residual five-level encoders for the frame (spatial) and flow (temporal) streams.

Module names mirror torchvision's ResNet (``conv1``, ``bn1``, ``layer1`` ...
``layer4``) so ImageNet weights can be copied in by name.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .ila import apply_attention
from .layers import CBR, batch_norm, init_parameters, resize

ASPP_RATES = (1, 6, 12, 18)


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    width_schedule: Tuple[int, int, int, int] = (64, 128, 256, 512)
    block_counts: Tuple[int, int, int, int] = (3, 4, 6, 3)
    aspp_out_channels: int = 64
    input_size: int = 352

    def validate(self):
        if self.in_channels < 1:
            raise ConfigError("in_channels", f"must be >= 1, got {self.in_channels}")
        if len(self.width_schedule) != 4:
            raise ConfigError("width_schedule", "needs exactly 4 entries")
        if len(self.block_counts) != 4:
            raise ConfigError("block_counts", "needs exactly 4 entries")
        if any(w < 1 for w in self.width_schedule):
            raise ConfigError("width_schedule", f"all widths must be >= 1, got {self.width_schedule}")
        if any(b < w for w, b in zip(self.width_schedule, self.width_schedule[1:])):
            raise ConfigError("width_schedule", f"must be nondecreasing, got {self.width_schedule}")
        if any(b < 1 for b in self.block_counts):
            raise ConfigError("block_counts", f"all counts must be >= 1, got {self.block_counts}")
        if self.aspp_out_channels < 1:
            raise ConfigError("aspp_out_channels", f"must be >= 1, got {self.aspp_out_channels}")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError("input_size", f"must be a positive multiple of 32, got {self.input_size}")
        return self

    @classmethod
    def resnet34(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides):
        kw = dict(width_schedule=(8, 16, 32, 64), block_counts=(1, 1, 1, 1), input_size=32)
        kw.update(overrides)
        return cls(**kw)

    def level_channels(self):
        return tuple(self.width_schedule) + (self.aspp_out_channels,)


class BasicBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = batch_norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = batch_norm(out_channels)
        self.relu = nn.ReLU(inplace=False)
        self.downsample = None
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                batch_norm(out_channels),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ASPP(nn.Module):
    """Four dilated 3x3 branches plus an image-pooling branch, concatenated and reduced by CBR.

    The pooling branch is conv + ReLU without BN so a single-image batch works in
    training mode (BN over a 1x1 map with one sample is undefined).
    """

    def __init__(self, in_channels, out_channels, rates=ASPP_RATES):
        super().__init__()
        if out_channels < 1:
            raise ConfigError("aspp_out_channels", f"must be >= 1, got {out_channels}")
        self.rates = tuple(rates)
        self.branches = nn.ModuleList(CBR(in_channels, out_channels, 3, dilation=r) for r in self.rates)
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, out_channels, 1, bias=False),
            nn.ReLU(inplace=False),
        )
        self.project = CBR(len(self.rates) * out_channels + out_channels, out_channels, 1)

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        pooled = self.pool(x)
        outs.append(pooled.expand(-1, -1, x.shape[-2], x.shape[-1]))
        return self.project(torch.cat(outs, dim=1))


def aspp(feature, out_channels=None, module=None):
    """Apply an ASPP head; builds a freshly initialized one when ``module`` is None."""
    if module is None:
        if out_channels is None or out_channels < 1:
            raise ConfigError("out_channels", f"must be >= 1, got {out_channels}")
        module = init_parameters(ASPP(feature.shape[1], out_channels).to(feature.dtype))
    return module(feature)


class Backbone(nn.Module):
    """ResNet-style encoder: stride-4 stem, four residual levels (strides 1,2,2,2) and an ASPP head."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config.validate()
        widths = config.width_schedule
        self.conv1 = nn.Conv2d(config.in_channels, widths[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = batch_norm(widths[0])
        self.relu = nn.ReLU(inplace=False)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        in_ch = widths[0]
        for i, (w, n, s) in enumerate(zip(widths, config.block_counts, (1, 2, 2, 2)), start=1):
            blocks = [BasicBlock(in_ch, w, s)] + [BasicBlock(w, w) for _ in range(n - 1)]
            setattr(self, f"layer{i}", nn.Sequential(*blocks))
            in_ch = w
        self.aspp = ASPP(in_ch, config.aspp_out_channels)

    def level(self, index: int, x):
        """Run residual level ``index`` (1-4); level 1 includes the stem."""
        if index == 1:
            x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        return getattr(self, f"layer{index}")(x)

    def forward(self, x):
        return extract_pyramid(self, x)


def build_backbone(config: BackboneConfig, generator: Optional[torch.Generator] = None) -> Backbone:
    return init_parameters(Backbone(config), generator)


def check_input(x, divisor=32):
    if x.dim() != 4:
        raise ShapeError(f"expected a (N, C, H, W) batch, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % divisor or w % divisor:
        raise ShapeError(f"input height and width must be divisible by {divisor}, got {h}x{w}")


def extract_pyramid(backbone: Backbone, image) -> List[torch.Tensor]:
    """Plain forward pass: ``[f1, f2, f3, f4, aspp(f4)]``."""
    check_input(image)
    feats = []
    x = image
    for i in range(1, 5):
        x = backbone.level(i, x)
        feats.append(x)
    feats.append(backbone.aspp(x))
    return feats


def spatial_forward(backbone: Backbone, ila, frame, use_attention=True):
    """Attention-injected spatial stream.

    Pass 1 runs the plain pyramid and computes ``A_i = ila[i](f_i, f_{i+1})``.
    Pass 2 reruns the levels with ``L_i = x_i * A_i + x_i`` feeding level ``i+1``.
    Returns ``(levels, attentions)``; ``attentions`` is None when disabled.
    """
    if not use_attention or ila is None:
        return extract_pyramid(backbone, frame), None
    feats = extract_pyramid(backbone, frame)
    attentions = [ila[i](feats[i], feats[i + 1]) for i in range(4)]
    levels = []
    x = frame
    for i in range(4):
        x = backbone.level(i + 1, x)
        if x.shape[-2:] != attentions[i].shape[-2:]:
            raise ShapeError(
                f"attention A{i + 1} is {tuple(attentions[i].shape[-2:])} but level {i + 1} "
                f"output is {tuple(x.shape[-2:])}")
        x = apply_attention(x, attentions[i])
        levels.append(x)
    levels.append(backbone.aspp(x))
    return levels, attentions


def temporal_forward(backbone_t: Backbone, flow_image):
    """Plain pyramid over the colour-coded flow image."""
    if flow_image.dim() == 4 and flow_image.shape[1] != backbone_t.config.in_channels:
        raise ShapeError(
            f"flow image has {flow_image.shape[1]} channels, backbone expects {backbone_t.config.in_channels}")
    return extract_pyramid(backbone_t, flow_image)


def level_sizes(input_size: int) -> Sequence[int]:
    s = input_size
    return (s // 4, s // 8, s // 16, s // 32, s // 32)
