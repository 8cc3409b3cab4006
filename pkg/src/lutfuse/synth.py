"""Seeded synthetic exposure stacks for tests and benchmarks.

A smooth random radiance field is exposed through a saturating tone curve
at each EV, so brighter frames clip highlights and darker frames crush
shadows the way bracketed captures do. Chroma is a smooth field that
desaturates toward neutral where luminance clips.
"""

from __future__ import annotations

import numpy as np

from ._num import quantize8
from .imgio import ExposureStack, YuvImage, resize_bilinear


def _smooth_field(rng, h, w, octaves=(8, 32)):
    field = np.zeros((h, w))
    for cells in octaves:
        ch = max(2, min(h, cells))
        cw = max(2, min(w, cells))
        noise = rng.standard_normal((ch, cw))
        field += resize_bilinear(noise, h, w) / len(octaves)
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo + 1e-12)


def synthetic_stack(width, height, evs=(-2.0, 0.0, 2.0), seed=0):
    """Build a deterministic ExposureStack of the given size."""
    rng = np.random.default_rng(seed)
    radiance = 0.04 + 0.92 * _smooth_field(rng, height, width)
    chroma_u = _smooth_field(rng, height, width) - 0.5
    chroma_v = _smooth_field(rng, height, width) - 0.5

    frames = []
    for ev in evs:
        lum = np.clip(radiance * 2.0 ** ev, 0.0, 1.0) ** (1.0 / 2.2)
        # saturated or crushed pixels lose chroma
        sat = 1.0 - np.abs(2.0 * lum - 1.0) ** 2
        u = np.clip(128.0 + 80.0 * chroma_u * sat, 0, 255)
        v = np.clip(128.0 + 80.0 * chroma_v * sat, 0, 255)
        frames.append(YuvImage(quantize8(lum),
                               np.round(u).astype(np.uint8),
                               np.round(v).astype(np.uint8)))
    return ExposureStack(frames, evs)


def synthetic_dataset(count, width, height, evs=(-2.0, 0.0, 2.0), seed=0):
    """A list of stacks with per-stack derived seeds."""
    return [synthetic_stack(width, height, evs, seed=seed * 1000 + i)
            for i in range(count)]
