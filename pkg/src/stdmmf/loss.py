"""Stream side outputs and the three-part BCE objective."""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .layers import resize

BCE_EPS = 1e-7
DEFAULT_W1 = 0.6
DEFAULT_W2 = 0.4


class SideOutput(nn.Module):
    """1x1 conv to one channel, upsampled to the mask size."""

    def __init__(self, in_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 1, 1)

    def logits(self, l5, out_size):
        return resize(self.conv(l5), out_size)

    def forward(self, l5, out_size):
        return torch.sigmoid(self.logits(l5, out_size))


def side_output(l5, out_size, module):
    return module(l5, out_size)


def bce(pred, gt, eps=BCE_EPS):
    """Pixel-mean binary cross entropy on probabilities clamped to [eps, 1 - eps]."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs mask {tuple(gt.shape)}")
    p = pred.clamp(eps, 1.0 - eps)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()


def bce_with_logits(logits, gt):
    """Fused sigmoid + BCE used for training; same value as ``bce`` away from the clamp."""
    if logits.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(logits.shape)} vs mask {tuple(gt.shape)}")
    return F.binary_cross_entropy_with_logits(logits, gt)


@dataclass
class LossReport:
    loss1: object
    loss2: object
    loss3: object
    total: object

    def as_floats(self):
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("loss1", "loss2", "loss3", "total")}


def total_loss(l1, l2, l3, w1=DEFAULT_W1, w2=DEFAULT_W2):
    if w1 < 0:
        raise ConfigError("loss_w1", f"must be >= 0, got {w1}")
    if w2 < 0:
        raise ConfigError("loss_w2", f"must be >= 0, got {w2}")
    return LossReport(l1, l2, l3, w1 * l1 + w2 * l2 + l3)
