"""Threshold gating of the stream weights, per-level mixing and the coarse-to-fine decoder."""
import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .layers import CBR, resize

DECODER_CHANNELS = 64


def gate_weights(iw, threshold=0.5):
    """Zero the smaller weight of a level when the two differ by at least ``threshold``.

    ``iw`` is (..., 5, 2). Comparisons are inclusive. No renormalization follows.
    Gradients pass through entries that are kept; zeroed entries get none.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("gate_threshold", f"must lie in [0, 1], got {threshold}")
    s, t = iw[..., 0], iw[..., 1]
    diff = s - t
    zero = torch.zeros_like(s)
    t_new = torch.where(diff >= threshold, zero, t)
    s_new = torch.where((diff < threshold) & (diff <= -threshold), zero, s)
    return torch.stack([s_new, t_new], dim=-1)


class LevelMixer(nn.Module):
    def __init__(self, level_channels, channels=DECODER_CHANNELS):
        super().__init__()
        self.cbr = nn.ModuleList(CBR(c, channels) for c in level_channels)

    def forward(self, ls, lt, gw):
        mixes = []
        for i, (cbr, s, t) in enumerate(zip(self.cbr, ls, lt)):
            if s.shape != t.shape:
                raise ShapeError(f"level {i + 1}: spatial {tuple(s.shape)} vs temporal {tuple(t.shape)}")
            ws = gw[:, i, 0].view(-1, 1, 1, 1)
            wt = gw[:, i, 1].view(-1, 1, 1, 1)
            mixes.append(cbr(s * ws + t * wt))
        return mixes


def mix_levels(ls, lt, gw, module):
    return module(ls, lt, gw)


class Decoder(nn.Module):
    """Coarse-to-fine fusion of Mix1..Mix5, modulated by the bi-modal attention.

    Fup5 = up(CBR(Mix5)) to Mix4's size
    Fup_k = up(CBR(Fup_{k+1} + Mix_k)) to Mix_{k-1}'s size, k = 4, 3, 2
    Fup1 = CBR(Mix1 + Fup2)
    OUT = sigmoid(up(conv(CBR(bi_att * Fup1 + Fup1))))
    """

    def __init__(self, channels=DECODER_CHANNELS):
        super().__init__()
        self.stage = nn.ModuleList(CBR(channels, channels) for _ in range(5))
        self.refine = CBR(channels, channels)
        self.out_conv = nn.Conv2d(channels, 1, 1)

    def features(self, mix, bi_att=None):
        """Returns ``(fup, head_input)``; ``fup`` is [Fup1, ..., Fup5]."""
        fup = [None] * 5
        x = resize(self.stage[4](mix[4]), mix[3].shape[-2:])
        fup[4] = x
        for k in (3, 2, 1):
            x = resize(self.stage[k](x + mix[k]), mix[k - 1].shape[-2:])
            fup[k] = x
        fup1 = self.stage[0](mix[0] + x)
        fup[0] = fup1
        if bi_att is None:
            head_in = fup1
        else:
            if bi_att.shape[-2:] != fup1.shape[-2:]:
                raise ShapeError(f"Bi-att {tuple(bi_att.shape[-2:])} does not match Mix1 {tuple(fup1.shape[-2:])}")
            head_in = bi_att * fup1 + fup1
        return fup, head_in

    def logits(self, mix, bi_att, out_size):
        if out_size[0] < mix[0].shape[-2] or out_size[1] < mix[0].shape[-1]:
            raise ConfigError("out_size", f"{tuple(out_size)} is smaller than Mix1 {tuple(mix[0].shape[-2:])}")
        _, head_in = self.features(mix, bi_att)
        return resize(self.out_conv(self.refine(head_in)), out_size)

    def forward(self, mix, bi_att, out_size):
        return torch.sigmoid(self.logits(mix, bi_att, out_size))


def decode(mix, bi_att, out_size, module):
    return module(mix, bi_att, out_size)
