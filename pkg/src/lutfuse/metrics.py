"""Evaluation metrics: brightness-subtracted PSNR, uniform-window SSIM,
and per-image report rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._num import window_sums
from .errors import ShapeError
from .training import mef_ssim_score

PSNR_CAP_DB = 100.0


def psnr_brightness_sub(a, b):
    """PSNR in dB after removing each image's mean brightness.

    Unsupervised fusion methods differ mostly by a global brightness
    offset, so both inputs are mean-centered before the MSE. Capped at
    100 dB for (near-)identical inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - a.mean()) - (b - b.mean())
    mse = float(np.mean(diff * diff))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def ssim(a, b, window=7):
    """Mean local SSIM with a uniform window at valid positions.

    Constants C1 = 0.01^2 and C2 = 0.03^2 on [0,1] intensities; local
    moments are population statistics over the window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if window > min(a.shape):
        raise ShapeError(f"window {window} exceeds image side {min(a.shape)}")
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    n = window * window
    mu_a = window_sums(a, window) / n
    mu_b = window_sums(b, window) / n
    var_a = window_sums(a * a, window) / n - mu_a * mu_a
    var_b = window_sums(b * b, window) / n - mu_b * mu_b
    cov = window_sums(a * b, window) / n - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


@dataclass(frozen=True)
class EvalRow:
    name: str
    psnr_db: float | None
    ssim: float | None
    mef_ssim: float


def evaluate(fused, reference, stack, name="image", window=7,
             stability_c=0.03 ** 2):
    """Metrics for one fused frame: PSNR/SSIM against the reference Y when
    one exists, structure similarity against the stack always."""
    fy = fused.y.astype(np.float64) / 255.0
    if stack.frames[0].y.shape != fused.y.shape:
        raise ShapeError("fused image and stack dimensions differ")
    mef = mef_ssim_score(stack.y_planes(), fy, window=window,
                         stability_c=stability_c)
    if reference is None:
        return EvalRow(name, None, None, mef)
    ry = reference.y.astype(np.float64) / 255.0
    return EvalRow(name, psnr_brightness_sub(fy, ry), ssim(fy, ry, window), mef)


def report_tsv(rows):
    """Tab-separated report with a header and an aggregate mean row."""
    lines = ["name\tpsnr_db\tssim\tmef_ssim"]
    fmt = lambda x: "-" if x is None else f"{x:.6f}"
    for row in rows:
        lines.append(f"{row.name}\t{fmt(row.psnr_db)}\t{fmt(row.ssim)}\t{fmt(row.mef_ssim)}")
    if rows:
        psnrs = [r.psnr_db for r in rows if r.psnr_db is not None]
        ssims = [r.ssim for r in rows if r.ssim is not None]
        mean_psnr = float(np.mean(psnrs)) if psnrs else None
        mean_ssim = float(np.mean(ssims)) if ssims else None
        mean_mef = float(np.mean([r.mef_ssim for r in rows]))
        lines.append(f"mean\t{fmt(mean_psnr)}\t{fmt(mean_ssim)}\t{fmt(mean_mef)}")
    return "\n".join(lines) + "\n"
