"""Synthetic moving-disk videos for smoke tests and demos.

Each frame shows a bright disk on a dark textured background. The "flow"
image is a colour-coded motion picture: the disk drawn at its displaced
position in a hue standing for the motion direction, on a white (zero
motion) background, the way colour-wheel flow renderings look.
"""
import colorsys
import math
from pathlib import Path

import numpy as np
from PIL import Image


def disk_mask(size, cx, cy, r):
    yy, xx = np.mgrid[0:size, 0:size]
    return ((xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r)


def make_video(size, n_frames, rng, radius=None):
    """Returns lists of (frame uint8 HxWx3, flow uint8 HxWx3, gt uint8 HxW in {0,255})."""
    radius = radius or size * rng.uniform(0.18, 0.26)
    cx, cy = rng.uniform(radius, size - radius, size=2)
    angle = rng.uniform(0, 2 * math.pi)
    speed = size * 0.04
    dx, dy = speed * math.cos(angle), speed * math.sin(angle)
    hue = angle / (2 * math.pi)
    motion_rgb = np.array(colorsys.hsv_to_rgb(hue, 1.0, 1.0)) * 255
    fg_rgb = rng.uniform(170, 255, size=3)
    frames, flows, gts = [], [], []
    for _ in range(n_frames):
        cx = float(np.clip(cx + dx, radius, size - radius))
        cy = float(np.clip(cy + dy, radius, size - radius))
        mask = disk_mask(size, cx, cy, radius)
        bg = rng.uniform(0, 60, size=(size, size, 1)) + rng.uniform(0, 20, size=(1, 1, 3))
        frame = np.where(mask[..., None], fg_rgb, bg)
        moved = disk_mask(size, cx + dx * 0.5, cy + dy * 0.5, radius)
        flow = np.where(moved[..., None], motion_rgb, 255.0)
        frames.append(frame.clip(0, 255).astype(np.uint8))
        flows.append(flow.astype(np.uint8))
        gts.append((mask * 255).astype(np.uint8))
    return frames, flows, gts


def write_dataset(root, n_videos=2, n_frames=4, size=32, seed=0, first_frame_flow=False):
    """Write ``<root>/video_XX/{frames,flow,gt}/NNNNN.png``.

    Frame 0 gets no flow image unless ``first_frame_flow``; it is written as an
    extra leading frame so ``n_frames`` usable samples remain per video.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for v in range(n_videos):
        frames, flows, gts = make_video(size, n_frames + 1, rng)
        vdir = root / f"video_{v:02d}"
        for sub in ("frames", "flow", "gt"):
            (vdir / sub).mkdir(parents=True, exist_ok=True)
        for i, (f, fl, g) in enumerate(zip(frames, flows, gts)):
            name = f"{i:05d}.png"
            Image.fromarray(f).save(vdir / "frames" / name)
            Image.fromarray(g).save(vdir / "gt" / name)
            if i > 0 or first_frame_flow:
                Image.fromarray(fl).save(vdir / "flow" / name)
    return root
