"""Training loop: SGD with momentum over groups of consecutive frames."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import torch

from ..errors import TrainingDiverged
from ..loss import bce_with_logits, total_loss
from .checkpoint import Checkpoint, load_pretrained_backbones, make_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import SampleLoader, clip_groups
from .model import build_model, forward_full

log = logging.getLogger(__name__)

THREADS_ENV = "STDMMF_NUM_THREADS"


def thread_cap():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    n = int(value)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {value}")
    return n


def set_deterministic(enabled=True):
    """Single-threaded, deterministic kernels for bitwise-reproducible runs."""
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)
        cap = thread_cap()
        if cap:
            torch.set_num_threads(cap)


def compute_loss(model, batch, config: TrainConfig):
    """Forward a batch and return ``(LossReport, ForwardOutput)``; losses are batch means."""
    result = forward_full(model, batch["frame"], batch["flow"])
    gt = batch["gt"].to(result.out_logits.dtype)
    l1 = bce_with_logits(result.i_sal_logits, gt)
    if result.f_sal_logits is None:
        l2 = torch.zeros((), dtype=gt.dtype)
    else:
        l2 = bce_with_logits(result.f_sal_logits, gt)
    l3 = bce_with_logits(result.out_logits, gt)
    return total_loss(l1, l2, l3, config.loss_w1, config.loss_w2), result


def make_optimizer(model, config: TrainConfig):
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=config.momentum,
                           weight_decay=config.weight_decay)


def _diagnostics(model, result):
    diag = {}
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            diag[f"param {name}"] = "non-finite values"
    norms = [float(p.detach().abs().max()) for p in model.parameters()]
    diag["max |param|"] = max(norms) if norms else 0.0
    if result is not None:
        for i, a in enumerate(result.diagnostics.get("attentions") or [], start=1):
            diag[f"A{i} min/max"] = (float(a.detach().min()), float(a.detach().max()))
        iw = result.diagnostics.get("interlayer_weight")
        if iw is not None:
            diag["interlayer weight"] = iw.detach().mean(dim=0).tolist()
    return diag


@dataclass
class TrainResult:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    checkpoint: Checkpoint
    history: List[dict] = field(default_factory=list)
    checkpoint_paths: List[Path] = field(default_factory=list)


def train(config: TrainConfig, dataset, out_dir=None, loader=None, max_steps: Optional[int] = None,
          deterministic=False, dtype=torch.float32) -> TrainResult:
    """Train from scratch (or from ``config.pretrained`` backbones).

    Each step is one group of ``clip_len`` consecutive frames of a single video.
    Group order is reshuffled every epoch from a generator seeded by
    ``config.seed``. A checkpoint is written to ``out_dir`` after every epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    set_deterministic(deterministic)
    generator = torch.Generator().manual_seed(config.seed)
    model = build_model(config, generator).to(dtype)
    if config.pretrained:
        load_pretrained_backbones(model, config.pretrained)
    optimizer = make_optimizer(model, config)
    loader = loader or SampleLoader(config.input_size, config.norm_mean, config.norm_std)
    groups = clip_groups(dataset, config.clip_len)
    out_dir = Path(out_dir) if out_dir is not None else None

    history, paths = [], []
    step = 0
    ckpt = make_checkpoint(model, config, optimizer, 0, generator)
    model.train()
    pool = ThreadPoolExecutor(max_workers=1)
    try:
        for epoch in range(1, config.epochs + 1):
            order = torch.randperm(len(groups), generator=generator).tolist()
            pending = pool.submit(loader.batch, groups[order[0]])
            for pos in range(len(order)):
                batch = pending.result()
                if pos + 1 < len(order):
                    pending = pool.submit(loader.batch, groups[order[pos + 1]])
                batch = {k: v.to(dtype) for k, v in batch.items()}
                report, result = compute_loss(model, batch, config)
                total = report.total
                if not math.isfinite(float(total.detach())):
                    raise TrainingDiverged(step, _diagnostics(model, result))
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                optimizer.step()
                entry = {"epoch": epoch, "step": step, **report.as_floats()}
                history.append(entry)
                log.info("epoch %d step %d loss1 %.6f loss2 %.6f loss3 %.6f total %.6f",
                         epoch, step, entry["loss1"], entry["loss2"], entry["loss3"], entry["total"])
                step += 1
                if max_steps is not None and step >= max_steps:
                    break
            ckpt = make_checkpoint(model, config, optimizer, epoch, generator)
            if out_dir is not None:
                paths.append(save_checkpoint(ckpt, out_dir / f"epoch_{epoch:03d}.ckpt"))
                save_checkpoint(ckpt, out_dir / "last.ckpt")
            if max_steps is not None and step >= max_steps:
                break
    finally:
        pool.shutdown(wait=True)
    return TrainResult(model, optimizer, ckpt, history, paths)
