"""Dataset layout: ``<root>[/<split>]/<video_id>/{frames,flow,gt}/NNNNN.png``."""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from ..errors import DataError
from .config import IMAGENET_MEAN, IMAGENET_STD

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SaliencySample:
    """One frame of one video; images are decoded on demand."""
    video_id: str
    frame_index: int
    frame_path: Path
    flow_path: Path
    gt_path: Optional[Path] = None

    @property
    def key(self):
        return f"{self.video_id}/{self.frame_path.stem}"

    def original_size(self):
        """(height, width) of the frame on disk."""
        with Image.open(self.frame_path) as im:
            return im.size[1], im.size[0]


def _indexed_images(directory: Path):
    out = {}
    if not directory.is_dir():
        return out
    for p in directory.iterdir():
        if p.suffix.lower() in IMAGE_SUFFIXES:
            try:
                out[int(p.stem)] = p
            except ValueError:
                log.warning("ignoring non-numeric frame name %s", p)
    return out


def load_dataset(root, split="train", require_gt=None) -> List[SaliencySample]:
    """Scan a dataset root and pair frames with flow and ground truth.

    ``<root>/<split>`` is used when it exists, otherwise ``root`` holds the
    videos directly. Frames without a flow image are skipped with a warning.
    Ground truth is required for train/val and optional for test.
    """
    root = Path(root)
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    base = root / split if (root / split).is_dir() else root
    if require_gt is None:
        require_gt = split != "test"
    samples = []
    for video_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        frames = _indexed_images(video_dir / "frames")
        if not frames:
            continue
        flows = _indexed_images(video_dir / "flow")
        gts = _indexed_images(video_dir / "gt")
        for idx in sorted(frames):
            if idx not in flows:
                log.warning("%s frame %d has no flow image; skipped", video_dir.name, idx)
                continue
            gt = gts.get(idx)
            if gt is None and require_gt:
                log.warning("%s frame %d has no ground truth; skipped", video_dir.name, idx)
                continue
            if gt is not None:
                with Image.open(frames[idx]) as a, Image.open(gt) as b:
                    if a.size != b.size:
                        raise DataError(
                            f"video {video_dir.name} frame {idx}: frame is {a.size[0]}x{a.size[1]} "
                            f"but ground truth is {b.size[0]}x{b.size[1]}")
            samples.append(SaliencySample(video_dir.name, idx, frames[idx], flows[idx], gt))
    if not samples:
        log.warning("no samples found under %s", base)
    return samples


def split_by_video(samples: Sequence[SaliencySample], val_fraction=0.1, seed=0):
    """Partition whole videos into (train, val); frames of a video never straddle."""
    videos = sorted({s.video_id for s in samples})
    rng = np.random.default_rng(seed)
    rng.shuffle(videos)
    n_val = int(round(len(videos) * val_fraction))
    val = set(videos[:n_val])
    return ([s for s in samples if s.video_id not in val],
            [s for s in samples if s.video_id in val])


def load_rgb(path, size):
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def load_mask(path, size=None):
    """Binary mask: pixel values >= 128 map to 1.0, others to 0.0."""
    with Image.open(path) as im:
        im = im.convert("L")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.NEAREST)
        return (np.asarray(im) >= 128).astype(np.float32)


def load_gray(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def to_tensor(rgb, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """HWC [0,1] array -> standardized CHW tensor."""
    arr = (rgb - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


class SampleLoader:
    """Decodes samples into model-ready tensors at a fixed square size."""

    def __init__(self, input_size, mean=IMAGENET_MEAN, std=IMAGENET_STD):
        self.input_size = input_size
        self.mean = mean
        self.std = std

    def __call__(self, sample: SaliencySample):
        s = self.input_size
        item = {
            "frame": to_tensor(load_rgb(sample.frame_path, s), self.mean, self.std),
            "flow": to_tensor(load_rgb(sample.flow_path, s), self.mean, self.std),
        }
        if sample.gt_path is not None:
            item["gt"] = torch.from_numpy(load_mask(sample.gt_path, s))[None]
        return item

    def batch(self, samples):
        items = [self(s) for s in samples]
        out = {k: torch.stack([it[k] for it in items]) for k in ("frame", "flow")}
        if all("gt" in it for it in items):
            out["gt"] = torch.stack([it["gt"] for it in items])
        return out


def clip_groups(samples: Sequence[SaliencySample], clip_len):
    """Non-overlapping runs of ``clip_len`` consecutive frames from one video.

    A trailing run shorter than ``clip_len`` is dropped unless it is the whole video.
    """
    by_video = {}
    for s in samples:
        by_video.setdefault(s.video_id, []).append(s)
    groups = []
    for vid in sorted(by_video):
        frames = sorted(by_video[vid], key=lambda s: s.frame_index)
        if len(frames) <= clip_len:
            groups.append(frames)
            continue
        for start in range(0, len(frames) - clip_len + 1, clip_len):
            groups.append(frames[start:start + clip_len])
    return groups


def relative_key(path: Path, root: Path):
    """Matching key for evaluation: relative path without suffix, ``gt`` components dropped."""
    parts = [p for p in path.relative_to(root).with_suffix("").parts if p != "gt"]
    return "/".join(parts)


def scan_maps(directory):
    """All image files under ``directory`` keyed by :func:`relative_key`; overlay/frames/flow trees skipped."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    out = {}
    for dirpath, dirnames, filenames in os.walk(directory):
        dirnames[:] = sorted(d for d in dirnames if d not in ("overlay", "frames", "flow"))
        for name in sorted(filenames):
            p = Path(dirpath) / name
            if p.suffix.lower() in IMAGE_SUFFIXES:
                out[relative_key(p, directory)] = p
    return out
