"""Classical reference fusion: per-pixel quality weights (contrast,
saturation, well-exposedness) with Laplacian-pyramid blending."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._num import ordered_sum, quantize8
from .errors import ConfigError, StackShapeError
from .imgio import ExposureStack, YuvImage, yuv_to_rgb_float
from .lut_engine import merge_uv

PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class MertensConfig:
    contrast_exp: float = 1.0
    saturation_exp: float = 1.0
    exposure_exp: float = 1.0
    sigma: float = 0.2
    levels: int | None = None  # None: log2(min side) - 2, at least 1

    def __post_init__(self):
        if min(self.contrast_exp, self.saturation_exp, self.exposure_exp) < 0:
            raise ConfigError("quality exponents must be >= 0")
        if self.levels is not None and self.levels < 1:
            raise ConfigError("levels must be >= 1")


def default_levels(h, w):
    return max(1, int(math.log2(min(h, w))) - 2)


def _laplacian_abs(y):
    """|4-neighbour Laplacian| with edge-replicated borders."""
    p = np.pad(y, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * y
    return np.abs(lap)


def mertens_weights(stack: ExposureStack, cfg: MertensConfig = MertensConfig()):
    """Per-pixel quality product for each frame, normalized across frames.

    Contrast looks at the Y Laplacian; saturation and well-exposedness are
    computed on the RGB reconstruction since the pipeline is YUV-native.
    """
    if stack.k < 1:
        raise StackShapeError("empty stack")
    raw = []
    for frame in stack.frames:
        y = frame.y.astype(np.float64) / 255.0
        r, g, b = yuv_to_rgb_float(frame.y, frame.u, frame.v)
        rgb = np.stack([r, g, b])
        contrast = _laplacian_abs(y)
        saturation = rgb.std(axis=0)
        well = np.exp(-((rgb - 0.5) ** 2) / (2.0 * cfg.sigma ** 2)).prod(axis=0)
        raw.append(np.power(contrast, cfg.contrast_exp)
                   * np.power(saturation, cfg.saturation_exp)
                   * np.power(well, cfg.exposure_exp) + 1e-12)
    weights = np.stack(raw)
    return weights / weights.sum(axis=0)


# ---------------------------------------------------------------------------
# Pyramids (5-tap kernel, edge replication)
# ---------------------------------------------------------------------------

def _blur5(img):
    p = np.pad(img, 2, mode="edge")
    tmp = sum(PYR_KERNEL[i] * p[i:i + img.shape[0], :] for i in range(5))
    return sum(PYR_KERNEL[j] * tmp[:, j:j + img.shape[1]] for j in range(5))


def _pyr_down(img):
    return _blur5(img)[::2, ::2]


def _pyr_up(img, shape):
    z = np.zeros(shape)
    z[::2, ::2] = img
    return _blur5(z) * 4.0


def gaussian_pyramid(img, levels):
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(_pyr_down(pyr[-1]))
    return pyr


def pyramid_blend(ystack, weights, levels):
    """Blend Laplacian levels of the frames with Gaussian levels of the
    weights and collapse. levels=1 degenerates to the flat weighted sum."""
    ystack = np.asarray(ystack, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if ystack.shape != weights.shape:
        raise StackShapeError(
            f"Y stack {ystack.shape} and weights {weights.shape} differ")
    k, h, w = ystack.shape
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    if levels > int(math.log2(min(h, w))):
        raise ConfigError(
            f"{levels} levels exceed log2 of the short side {min(h, w)}")

    gp_y = [gaussian_pyramid(ystack[i], levels) for i in range(k)]
    gp_w = [gaussian_pyramid(weights[i], levels) for i in range(k)]

    blended = ordered_sum(
        np.stack([gp_w[i][-1] * gp_y[i][-1] for i in range(k)]), axis=0)
    for lvl in range(levels - 2, -1, -1):
        shape = gp_y[0][lvl].shape
        laps = np.stack([gp_y[i][lvl] - _pyr_up(gp_y[i][lvl + 1], shape)
                         for i in range(k)])
        gws = np.stack([gp_w[i][lvl] for i in range(k)])
        blended = _pyr_up(blended, shape) + ordered_sum(gws * laps, axis=0)
    return blended


def mertens_fuse(stack: ExposureStack, cfg: MertensConfig = MertensConfig()):
    """Full baseline: quality weights + pyramid blend on Y, chroma merge."""
    levels = cfg.levels or default_levels(stack.height, stack.width)
    weights = mertens_weights(stack, cfg)
    fused_y = pyramid_blend(stack.y_planes(), weights, levels)
    u = merge_uv(np.stack([f.u for f in stack.frames]))
    v = merge_uv(np.stack([f.v for f in stack.frames]))
    return YuvImage(quantize8(np.clip(fused_y, 0.0, 1.0)), u, v)
