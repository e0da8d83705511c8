"""Saliency evaluation measures: MAE, F-measure, E-measure and S-measure.

Per-frame functions take float arrays ``pred`` in [0, 1] and binary ``gt``.
Curves are evaluated at the 256 thresholds ``k / 255``, binarizing ``pred >= t``.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ShapeError

THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0
BETA2 = 0.3
EPS = 1e-8
S_ALPHA = 0.5
METRIC_KEYS = ("mae", "max_f", "mean_f", "max_em", "mean_em", "sm")


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt > 0.5


def mae(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


def _threshold_counts(pred, gt):
    """Foreground/background pixel counts with ``pred >= t`` for every threshold."""
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    tp = fg.size - np.searchsorted(fg, THRESHOLDS, side="left")
    fp = bg.size - np.searchsorted(bg, THRESHOLDS, side="left")
    return tp.astype(np.float64), fp.astype(np.float64), float(fg.size), float(bg.size)


def f_curve(pred, gt):
    """F-measure (beta^2 = 0.3) at each threshold; all zeros when gt is empty."""
    pred, gt = _pair(pred, gt)
    tp, fp, n_fg, _ = _threshold_counts(pred, gt)
    if n_fg == 0:
        return np.zeros_like(THRESHOLDS)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = tp / n_fg
        denom = BETA2 * precision + recall
        return np.where(denom > 0, (1 + BETA2) * precision * recall / denom, 0.0)


def f_measure_curve(pred, gt):
    curve = f_curve(pred, gt)
    return float(curve.max()), float(curve.mean())


def adaptive_f(pred, gt):
    """F-measure at the adaptive threshold ``min(2 * mean(pred), 1)``."""
    pred, gt = _pair(pred, gt)
    if not gt.any():
        return 0.0
    binary = pred >= min(2.0 * pred.mean(), 1.0)
    tp = float(np.count_nonzero(binary & gt))
    precision = tp / binary.sum() if binary.any() else 0.0
    recall = tp / gt.sum()
    denom = BETA2 * precision + recall
    return (1 + BETA2) * precision * recall / denom if denom > 0 else 0.0


def em_curve(pred, gt):
    """Enhanced-alignment score at each threshold.

    For binary maps the alignment term takes one value per (gt, bin) pixel
    class, so it is evaluated from four counts instead of per pixel.
    """
    pred, gt = _pair(pred, gt)
    n = float(gt.size)
    tp, fp, n_fg, n_bg = _threshold_counts(pred, gt)
    fn = n_fg - tp
    tn = n_bg - fp
    mu_g = n_fg / n
    mu_b = (tp + fp) / n

    def enhanced(g, b):
        dg = g - mu_g
        db = b - mu_b
        phi = 2.0 * dg * db / (dg * dg + db * db + EPS)
        return (1.0 + phi) ** 2 / 4.0

    score = (tp * enhanced(1.0, 1.0) + fn * enhanced(1.0, 0.0)
             + fp * enhanced(0.0, 1.0) + tn * enhanced(0.0, 0.0)) / n
    # both maps constant: identical -> 1, opposite -> 0
    b_const_one = (tp + fp) == n
    b_const_zero = (tp + fp) == 0
    if n_fg == n:
        score = np.where(b_const_one, 1.0, np.where(b_const_zero, 0.0, score))
    elif n_fg == 0:
        score = np.where(b_const_zero, 1.0, np.where(b_const_one, 0.0, score))
    return score


def e_measure_curve(pred, gt):
    curve = em_curve(pred, gt)
    return float(curve.max()), float(curve.mean())


def _object_score(x):
    if x.size == 0:
        return 0.0
    mean = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + sigma + EPS)


def _s_object(pred, gt):
    ratio = gt.mean()
    o_fg = _object_score(pred[gt])
    o_bg = _object_score(1.0 - pred[~gt])
    return ratio * o_fg + (1.0 - ratio) * o_bg


def _ssim(pred, gt):
    n = pred.size
    if n == 0:
        return 0.0
    x = pred.mean()
    y = gt.mean()
    dx = pred - x
    dy = gt - y
    if n > 1:
        sx = (dx * dx).sum() / (n - 1)
        sy = (dy * dy).sum() / (n - 1)
        sxy = (dx * dy).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def centroid(gt):
    """1-based (column, row) of the foreground centroid, rounded half to even."""
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    rows, cols = np.nonzero(gt)
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def _s_region(pred, gt):
    h, w = gt.shape
    cx, cy = centroid(gt)
    g = gt.astype(np.float64)
    score = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        block_gt = g[rs, cs]
        weight = block_gt.size / (h * w)
        if weight:
            score += weight * _ssim(pred[rs, cs], block_gt)
    return score


def s_measure(pred, gt, alpha=S_ALPHA):
    pred, gt = _pair(pred, gt)
    ratio = gt.mean()
    if ratio == 0:
        score = 1.0 - pred.mean()
    elif ratio == 1:
        score = pred.mean()
    else:
        score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(min(max(score, 0.0), 1.0))


@dataclass
class FrameMetrics:
    """Per-frame measurements kept at curve resolution for dataset-level aggregation."""
    mae: float
    f_curve: np.ndarray
    em_curve: np.ndarray
    sm: float
    adaptive_f: float
    empty_gt: bool = False
    name: str = ""


def evaluate_frame(pred, gt, name=""):
    pred = np.asarray(pred, dtype=np.float64)
    gt_b = np.asarray(gt) > 0.5
    return FrameMetrics(
        mae=mae(pred, gt_b.astype(np.float64)),
        f_curve=f_curve(pred, gt_b),
        em_curve=em_curve(pred, gt_b),
        sm=s_measure(pred, gt_b),
        adaptive_f=adaptive_f(pred, gt_b),
        empty_gt=not gt_b.any(),
        name=name,
    )


@dataclass
class MetricReport:
    mae: float
    max_f: float
    mean_f: float
    max_em: float
    mean_em: float
    sm: float
    frames: int = 1
    empty_gt_frames: List[str] = field(default_factory=list)

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_text(self):
        """Machine-readable ``key = value`` document, six decimals."""
        return "".join(f"{k} = {getattr(self, k):.6f}\n" for k in METRIC_KEYS)

    def to_table(self):
        head = " | ".join(f"{k:>8}" for k in METRIC_KEYS)
        vals = " | ".join(f"{getattr(self, k):8.6f}" for k in METRIC_KEYS)
        lines = [head, "-" * len(head), vals, f"frames: {self.frames}"]
        if self.empty_gt_frames:
            lines.append(f"frames with empty ground truth (F = 0): {len(self.empty_gt_frames)}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                values[key.strip()] = float(value)
        return cls(**{k: values[k] for k in METRIC_KEYS})


def aggregate(frames: Sequence[FrameMetrics], mean_f_mode="curve") -> MetricReport:
    """Dataset report: curves are averaged over frames before max/mean.

    ``mean_f_mode='adaptive'`` reports the mean adaptive-threshold F instead of
    the curve mean.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("aggregate needs at least one frame")
    n = len(frames)
    f = np.sum([fr.f_curve for fr in frames], axis=0) / n
    em = np.sum([fr.em_curve for fr in frames], axis=0) / n
    if mean_f_mode == "curve":
        mean_f = float(f.mean())
    elif mean_f_mode == "adaptive":
        mean_f = math.fsum(fr.adaptive_f for fr in frames) / n
    else:
        raise ValueError(f"unknown mean_f_mode {mean_f_mode!r}")
    return MetricReport(
        mae=math.fsum(fr.mae for fr in frames) / n,
        max_f=float(f.max()),
        mean_f=mean_f,
        max_em=float(em.max()),
        mean_em=float(em.mean()),
        sm=math.fsum(fr.sm for fr in frames) / n,
        frames=n,
        empty_gt_frames=[fr.name for fr in frames if fr.empty_gt],
    )


def evaluate_pairs(pairs, mean_f_mode="curve"):
    """Convenience: aggregate over an iterable of ``(pred, gt)`` arrays."""
    return aggregate([evaluate_frame(p, g) for p, g in pairs], mean_f_mode=mean_f_mode)
