"""Directory-level evaluation of saved saliency maps against ground truth."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List

import numpy as np
from PIL import Image

from ..metrics import MetricReport, aggregate, evaluate_frame
from .data import load_gray, load_mask, scan_maps
from .train import thread_cap

log = logging.getLogger(__name__)


@dataclass
class Evaluation:
    report: MetricReport
    unmatched_pred: List[str] = field(default_factory=list)
    unmatched_gt: List[str] = field(default_factory=list)

    @property
    def complete(self):
        return not (self.unmatched_pred or self.unmatched_gt)


def load_prediction(path, shape):
    """Prediction in [0,1], bilinearly resized to ``shape`` (h, w) if needed."""
    pred = load_gray(path)
    if pred.shape != tuple(shape):
        with Image.open(path) as im:
            im = im.convert("L").resize((shape[1], shape[0]), Image.BILINEAR)
            pred = np.asarray(im, dtype=np.float64) / 255.0
    return pred


def _frame(key, ppath, gpath):
    gt = load_mask(gpath).astype(np.float64)
    return evaluate_frame(load_prediction(ppath, gt.shape), gt, name=key)


def evaluate(pred_dir, gt_dir, mean_f_mode="curve", workers=None) -> Evaluation:
    """Match files by relative path (``gt`` path components ignored) and aggregate.

    Unmatched files are reported; the intersection is still evaluated.
    """
    preds = scan_maps(pred_dir)
    gts = scan_maps(gt_dir)
    keys = sorted(set(preds) & set(gts))
    unmatched_pred = sorted(set(preds) - set(gts))
    unmatched_gt = sorted(set(gts) - set(preds))
    for k in unmatched_pred:
        log.warning("prediction without ground truth: %s", k)
    for k in unmatched_gt:
        log.warning("ground truth without prediction: %s", k)
    if not keys:
        raise ValueError(f"no matching prediction/ground-truth pairs between {pred_dir} and {gt_dir}")
    workers = workers or thread_cap() or None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        frames = list(pool.map(lambda k: _frame(k, preds[k], gts[k]), keys))
    report = aggregate(frames, mean_f_mode=mean_f_mode)
    return Evaluation(report, unmatched_pred, unmatched_gt)
