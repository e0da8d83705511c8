"""Full two-stream network: spatial, temporal and mixed flows."""
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch
import torch.nn as nn

from ..bma import StreamAttention, bimodal_attention
from ..encoders import Backbone, spatial_forward, temporal_forward
from ..fusion import Decoder, LevelMixer, gate_weights
from ..ila import build_ila_stack
from ..ilw import StreamDescriptor, fixed_weight, interlayer_weight
from ..layers import init_parameters
from ..loss import SideOutput
from .config import TrainConfig


class STDMMFNet(nn.Module):
    """Frame + optical-flow saliency network.

    Ablation flags (all fixed at construction):

    - ``disable_temporal``: the flow backbone is not run; temporal levels are
      zero and the weight table is forced to rows (1, 0).
    - ``disable_ila``: the spatial stream is the plain pyramid.
    - ``disable_ilw``: the weight table is fixed to rows (0.5, 0.5).
    - ``disable_bma``: no bi-modal attention; the decoder head sees Fup1 alone
      (``Fa`` is dropped instead of being modulated).
    """

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.config = config
        bb = config.backbone_config()
        channels = bb.level_channels()
        self.spatial = Backbone(bb)
        self.temporal = Backbone(bb)
        self.ila = build_ila_stack(channels)
        self.ilw_spatial = StreamDescriptor(channels)
        self.ilw_temporal = StreamDescriptor(channels)
        self.bma_spatial = StreamAttention(channels[3], channels[4])
        self.bma_temporal = StreamAttention(channels[3], channels[4])
        self.mixer = LevelMixer(channels)
        self.decoder = Decoder()
        self.side_spatial = SideOutput(channels[4])
        self.side_temporal = SideOutput(channels[4])

    def forward(self, frame, flow):
        return forward_full(self, frame, flow)


def build_model(config: TrainConfig, generator: Optional[torch.Generator] = None) -> STDMMFNet:
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    return init_parameters(STDMMFNet(config), generator)


@dataclass
class ForwardOutput:
    out: torch.Tensor
    out_logits: torch.Tensor
    i_sal: torch.Tensor
    i_sal_logits: torch.Tensor
    f_sal: Optional[torch.Tensor]
    f_sal_logits: Optional[torch.Tensor]
    diagnostics: Dict[str, object] = field(default_factory=dict)


def forward_full(model: STDMMFNet, frame, flow) -> ForwardOutput:
    cfg = model.config
    out_size = frame.shape[-2:]
    n = frame.shape[0]

    ls, attentions = spatial_forward(model.spatial, model.ila, frame, use_attention=not cfg.disable_ila)
    if cfg.disable_temporal:
        lt = [torch.zeros_like(x) for x in ls]
    else:
        lt = temporal_forward(model.temporal, flow)

    if cfg.disable_temporal:
        iw = fixed_weight(n, 1.0, 0.0, frame)
    elif cfg.disable_ilw:
        iw = fixed_weight(n, 0.5, 0.5, frame)
    else:
        iw = interlayer_weight(model.ilw_spatial(ls), model.ilw_temporal(lt))

    bi_att = None
    if not cfg.disable_bma:
        target = ls[0].shape[-2:]
        s_att = model.bma_spatial(ls[3], ls[4], iw[..., 0].sum(dim=-1), target)
        if cfg.disable_temporal:
            t_att = torch.zeros_like(s_att)
        else:
            t_att = model.bma_temporal(lt[3], lt[4], iw[..., 1].sum(dim=-1), target)
        bi_att = bimodal_attention(s_att, t_att, iw.sum(dim=(-2, -1)))

    gated = gate_weights(iw, cfg.gate_threshold)
    mix = model.mixer(ls, lt, gated)
    out_logits = model.decoder.logits(mix, bi_att, out_size)

    i_logits = model.side_spatial.logits(ls[4], out_size)
    f_logits = None if cfg.disable_temporal else model.side_temporal.logits(lt[4], out_size)

    diagnostics = {
        "attentions": attentions,
        "interlayer_weight": iw,
        "gated_weight": gated,
        "bi_att": bi_att,
        "spatial_levels": ls,
        "temporal_levels": lt,
        "mix": mix,
    }
    return ForwardOutput(
        out=torch.sigmoid(out_logits),
        out_logits=out_logits,
        i_sal=torch.sigmoid(i_logits),
        i_sal_logits=i_logits,
        f_sal=None if f_logits is None else torch.sigmoid(f_logits),
        f_sal_logits=f_logits,
        diagnostics=diagnostics,
    )
