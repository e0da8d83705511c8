"""Inference to 8-bit PNG saliency maps and overlay export."""
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..layers import resize
from .checkpoint import Checkpoint, load_checkpoint, restore_model
from .config import TrainConfig
from .data import SampleLoader, load_gray, scan_maps
from .model import STDMMFNet, forward_full

log = logging.getLogger(__name__)

OVERLAY_ALPHA = 0.6
OVERLAY_COLOR = (255.0, 0.0, 0.0)


def quantize(saliency):
    """[0,1] -> uint8 via ``floor(x * 255 + 0.5)`` (round half away from zero for x >= 0)."""
    x = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def overlay(frame_rgb, saliency, alpha=OVERLAY_ALPHA, color=OVERLAY_COLOR):
    """Alpha-blend a colour over ``frame_rgb`` (uint8 HWC) with per-pixel weight ``alpha * saliency``."""
    w = (alpha * np.asarray(saliency, dtype=np.float64))[..., None]
    blended = frame_rgb.astype(np.float64) * (1.0 - w) + np.asarray(color) * w
    return np.floor(blended + 0.5).clip(0, 255).astype(np.uint8)


def model_from_checkpoint(ckpt: Checkpoint):
    config = TrainConfig.from_dict(ckpt.config).replace(pretrained="")
    model = STDMMFNet(config)
    restore_model(ckpt, model)
    return model.eval()


def output_path(out_dir: Path, sample):
    return out_dir / sample.video_id / f"{sample.frame_path.stem}.png"


def infer(checkpoint, dataset, out_dir, overlay_frames=False):
    """Write one grayscale PNG per sample at the frame's original resolution.

    Layout: ``<out_dir>/<video_id>/<frame stem>.png``; overlays go to
    ``<out_dir>/<video_id>/overlay/<frame stem>.png`` when requested.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    cfg = model.config
    loader = SampleLoader(cfg.input_size, cfg.norm_mean, cfg.norm_std)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from None
    written = []
    with torch.no_grad():
        for sample in dataset:
            batch = loader.batch([sample])
            out = forward_full(model, batch["frame"], batch["flow"]).out
            h, w = sample.original_size()
            sal = resize(out, (h, w))[0, 0].numpy()
            path = output_path(out_dir, sample)
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(quantize(sal), mode="L").save(path)
            written.append(path)
            if overlay_frames:
                with Image.open(sample.frame_path) as im:
                    rgb = np.asarray(im.convert("RGB"))
                opath = path.parent / "overlay" / path.name
                opath.parent.mkdir(exist_ok=True)
                Image.fromarray(overlay(rgb, sal)).save(opath)
    log.info("wrote %d saliency maps to %s", len(written), out_dir)
    return written


def export_overlays(pred_dir, frames_root, out_dir):
    """Overlay saved saliency maps onto ``<frames_root>/<video>/frames/<stem>.*``."""
    pred_dir, frames_root, out_dir = Path(pred_dir), Path(frames_root), Path(out_dir)
    frames = scan_maps_with_frames(frames_root)
    written, missing = [], []
    for key, ppath in scan_maps(pred_dir).items():
        fpath = frames.get(key)
        if fpath is None:
            missing.append(key)
            continue
        sal = load_gray(ppath)
        with Image.open(fpath) as im:
            rgb = np.asarray(im.convert("RGB"))
        if sal.shape != rgb.shape[:2]:
            sal = np.asarray(Image.fromarray(quantize(sal)).resize(
                (rgb.shape[1], rgb.shape[0]), Image.BILINEAR), dtype=np.float64) / 255.0
        target = out_dir / f"{key}.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(overlay(rgb, sal)).save(target)
        written.append(target)
    for key in missing:
        log.warning("no frame found for prediction %s", key)
    return written, missing


def scan_maps_with_frames(root: Path):
    """Frame images keyed like predictions: ``<video>/<stem>``."""
    out = {}
    for video in sorted(p for p in root.iterdir() if p.is_dir()):
        fdir = video / "frames"
        if fdir.is_dir():
            for f in sorted(fdir.iterdir()):
                out[f"{video.name}/{f.stem}"] = f
    return out
