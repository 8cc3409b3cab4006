"""Deployment path: LUT query, weight normalization, guided-filter
upsampling, luminance blending, chroma merging, and the fused pipeline.

Weight maps are (K, H, W) float64 arrays. Every cross-frame reduction in
this module sums in value-sorted order so that permuting (frames, LUT
rows, EVs) together leaves the fused output bitwise unchanged.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._num import box_counts, box_sums, ordered_sum, quantize8, round_half_up
from .errors import ConfigError, StackShapeError, WeightDomainError
from .imgio import (ExposureStack, LutMatrix, YuvImage, choose_rate,
                    downsample_bilinear, resize_bilinear)


@dataclass(frozen=True)
class FusionConfig:
    """Tunables of the deployment path."""

    gfu_radius: int = 2
    gfu_eps: float = 1e-4
    norm_eps: float = 1e-8
    target_min: int = 128
    upsample: str = "gfu"  # "gfu" or "bilinear"

    def __post_init__(self):
        if self.gfu_radius < 1:
            raise ConfigError("gfu_radius must be >= 1")
        if self.gfu_eps <= 0:
            raise ConfigError("gfu_eps must be > 0")
        if self.norm_eps <= 0:
            raise ConfigError("norm_eps must be > 0")
        if self.upsample not in ("gfu", "bilinear"):
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")


def query_weights(lut: LutMatrix, ylow):
    """Per-pixel table lookup: weight of frame k at (i,j) is row k of the
    table indexed by that frame's 8-bit intensity."""
    ylow = np.asarray(ylow)
    if ylow.ndim != 3:
        raise StackShapeError(f"expected (K, H, W) planes, got {ylow.shape}")
    if ylow.shape[0] != lut.k_frames:
        raise StackShapeError(
            f"stack has {ylow.shape[0]} frames but LUT has {lut.k_frames} rows")
    # real-valued planes are rounded half-up to 8-bit intensities
    idx = ylow.astype(np.intp) if ylow.dtype == np.uint8 \
        else round_half_up(ylow).astype(np.intp)
    if idx.min() < 0 or idx.max() > 255:
        raise StackShapeError("query values must be 8-bit (0..255)")
    table = lut.table.astype(np.float64)
    k = np.arange(lut.k_frames)[:, None, None]
    return table[k, idx]


def normalize_weights(weights, norm_eps=1e-8):
    """Make per-pixel weights sum to one; eps keeps all-zero pixels uniform."""
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise WeightDomainError("weights must be nonnegative")
    shifted = weights + norm_eps
    return shifted / ordered_sum(shifted, axis=0)


def gfu_upsample(wlow, ylow, yfull, radius=2, eps=1e-4):
    """Transfer a low-res weight plane to full resolution guided by Y.

    Linear coefficients are fit in box windows at low resolution
    (a = cov(guide, weight) / (var(guide) + eps), b = mean - a*mean),
    box-smoothed, bilinearly upsampled, and applied to the full-res guide.
    Negative outputs are clamped to zero.
    """
    wlow = np.asarray(wlow, dtype=np.float64)
    ylow = np.asarray(ylow, dtype=np.float64)
    yfull = np.asarray(yfull, dtype=np.float64)
    if wlow.shape != ylow.shape:
        raise StackShapeError(
            f"weight {wlow.shape} and guide {ylow.shape} dimensions differ")
    if yfull.shape[0] < ylow.shape[0] or yfull.shape[1] < ylow.shape[1]:
        raise StackShapeError(
            f"full-res guide {yfull.shape} smaller than low-res {ylow.shape}")

    h, w = ylow.shape
    n = box_counts(h, w, radius)
    mean_y = box_sums(ylow, radius) / n
    mean_w = box_sums(wlow, radius) / n
    var_y = box_sums(ylow * ylow, radius) / n - mean_y * mean_y
    cov_yw = box_sums(ylow * wlow, radius) / n - mean_y * mean_w
    a = cov_yw / (var_y + eps)
    b = mean_w - a * mean_y
    a = box_sums(a, radius) / n
    b = box_sums(b, radius) / n
    fh, fw = yfull.shape
    a_full = resize_bilinear(a, fh, fw)
    b_full = resize_bilinear(b, fh, fw)
    return np.maximum(a_full * yfull + b_full, 0.0)


def blend_y(ystack, weights):
    """Per-pixel weighted sum of the Y planes (weights must be normalized)."""
    ystack = np.asarray(ystack, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if ystack.shape != weights.shape:
        raise StackShapeError(
            f"Y stack {ystack.shape} and weights {weights.shape} differ")
    sums = ordered_sum(weights, axis=0)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        raise WeightDomainError("blend weights must sum to 1 per pixel")
    return ordered_sum(ystack * weights, axis=0)


def merge_uv(pstack, tau=128):
    """Chroma merge: each frame's pixel weighted by its distance from the
    neutral value tau; pixels where every frame is neutral stay neutral."""
    pstack = np.asarray(pstack)
    if pstack.ndim != 3:
        raise StackShapeError(f"expected (K, H, W) planes, got {pstack.shape}")
    p = pstack.astype(np.float64)
    dist = np.abs(p - float(tau))
    num = ordered_sum(dist * p, axis=0)
    den = ordered_sum(dist, axis=0)
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), float(tau))
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def adapt_frame_count(stack: ExposureStack, k_lut):
    """Match the stack's frame count to the LUT row count.

    More frames than rows: partition in EV order into contiguous groups,
    earlier groups larger on remainder, and average each group pixelwise.
    Fewer frames than rows: duplicate the proportionally nearest frame.
    """
    if k_lut < 1:
        raise ConfigError("k_lut must be >= 1")
    k = stack.k
    if k == 0:
        raise StackShapeError("empty stack")
    if k == k_lut:
        return stack
    if k > k_lut:
        base, rem = divmod(k, k_lut)
        sizes = [base + 1] * rem + [base] * (k_lut - rem)
        frames, evs = [], []
        start = 0
        for size in sizes:
            group = stack.frames[start:start + size]
            planes = []
            for attr in ("y", "u", "v"):
                acc = np.mean([getattr(f, attr).astype(np.float64) for f in group],
                              axis=0)
                planes.append(np.clip(round_half_up(acc), 0, 255).astype(np.uint8))
            frames.append(YuvImage(*planes))
            evs.append(float(np.mean(stack.evs[start:start + size])))
            start += size
        return ExposureStack(frames, evs)
    idx = [j * k // k_lut for j in range(k_lut)]
    return ExposureStack([stack.frames[i] for i in idx],
                         [stack.evs[i] for i in idx])


def _upsample_weights(wlow, ylow, yfull, cfg, threads):
    if cfg.upsample == "bilinear":
        fh, fw = yfull.shape[1:]
        planes = [np.maximum(resize_bilinear(wl, fh, fw), 0.0) for wl in wlow]
        return np.stack(planes)

    def per_frame(i):
        return gfu_upsample(wlow[i], ylow[i], yfull[i],
                            radius=cfg.gfu_radius, eps=cfg.gfu_eps)

    k = wlow.shape[0]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            planes = list(pool.map(per_frame, range(k)))
    else:
        planes = [per_frame(i) for i in range(k)]
    return np.stack(planes)


def _fuse_with_weights(stack, low_weights, ylow, cfg, threads):
    """Shared tail of the pipeline once low-res weights exist."""
    yfull = stack.y_planes()
    wlow = normalize_weights(low_weights, cfg.norm_eps)
    wfull = _upsample_weights(wlow, ylow, yfull, cfg, threads)
    wfull = normalize_weights(wfull, cfg.norm_eps)
    fused_y = np.clip(blend_y(yfull, wfull), 0.0, 1.0)
    u = merge_uv(np.stack([f.u for f in stack.frames]))
    v = merge_uv(np.stack([f.v for f in stack.frames]))
    return YuvImage(quantize8(fused_y), u, v), wfull


def fuse(stack: ExposureStack, lut: LutMatrix, cfg: FusionConfig = FusionConfig(),
         threads=1, return_weights=False):
    """LUT deployment pipeline: adapt frame count, downsample Y, quantize,
    query, normalize, upsample with the guided filter, blend, merge UV."""
    stack = adapt_frame_count(stack, lut.k_frames)
    s = choose_rate(stack.height, stack.width, cfg.target_min)
    ylow = np.stack([downsample_bilinear(f.y, s) for f in stack.frames])
    wlow = query_weights(lut, quantize8(ylow))
    fused, wfull = _fuse_with_weights(stack, wlow, ylow, cfg, threads)
    return (fused, wfull) if return_weights else fused


def fuse_network(stack: ExposureStack, params, cfg: FusionConfig = FusionConfig(),
                 threads=1, return_weights=False):
    """Same pipeline, but weights predicted by the network instead of the
    LUT (the path the tables are distilled from)."""
    from .network import network_forward
    stack = adapt_frame_count(stack, params.k_frames)
    s = choose_rate(stack.height, stack.width, cfg.target_min)
    ylow = np.stack([downsample_bilinear(f.y, s) for f in stack.frames])
    wlow = network_forward(quantize8(ylow).astype(np.float64) / 255.0, params)
    fused, wfull = _fuse_with_weights(stack, wlow, ylow, cfg, threads)
    return (fused, wfull) if return_weights else fused
