"""Shared numeric helpers: rounding, reductions, window sums, resampling."""

from __future__ import annotations

import numpy as np


def round_half_up(x):
    """Round to nearest integer with .5 going up (not banker's rounding)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def quantize8(x):
    """Map real values in [0,1] to uint8 with round-half-up and clamping."""
    return np.clip(round_half_up(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def ordered_sum(stack, axis=0):
    """Sum along `axis` in ascending value order.

    Summing a multiset in a canonical order makes the result bitwise
    independent of how the inputs were permuted along `axis`, which the
    fusion pipeline relies on for its frame-permutation guarantee. The
    frame counts here are small, so an elementwise compare-exchange
    network beats a real sort.
    """
    stack = np.asarray(stack)
    arrs = list(np.moveaxis(stack, axis, 0))
    k = len(arrs)
    for i in range(k - 1):
        for j in range(k - 1 - i):
            lo = np.minimum(arrs[j], arrs[j + 1])
            hi = np.maximum(arrs[j], arrs[j + 1])
            arrs[j], arrs[j + 1] = lo, hi
    out = arrs[0].astype(np.float64, copy=True) if k == 1 else arrs[0]
    for a in arrs[1:]:
        out = out + a
    return out


def window_sums(x, w):
    """Sums over all w-by-w windows at valid positions (stride 1).

    Returns an array of shape (H - w + 1, W - w + 1) computed with an
    integral image, so each call is O(H*W) regardless of w.
    """
    x = np.asarray(x, dtype=np.float64)
    h, wd = x.shape
    ii = np.zeros((h + 1, wd + 1))
    ii[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]


def box_sums(x, radius):
    """Per-pixel sums over clipped (2r+1)-square windows, same shape as x."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    i = np.arange(h)
    j = np.arange(w)
    top = np.maximum(i - radius, 0)
    bot = np.minimum(i + radius + 1, h)
    left = np.maximum(j - radius, 0)
    right = np.minimum(j + radius + 1, w)
    return (ii[bot[:, None], right[None, :]] - ii[top[:, None], right[None, :]]
            - ii[bot[:, None], left[None, :]] + ii[top[:, None], left[None, :]])


def box_counts(h, w, radius):
    """Pixel counts of the clipped box windows used by box_sums."""
    i = np.arange(h)
    j = np.arange(w)
    rows = np.minimum(i + radius + 1, h) - np.maximum(i - radius, 0)
    cols = np.minimum(j + radius + 1, w) - np.maximum(j - radius, 0)
    return rows[:, None].astype(np.float64) * cols[None, :]


def bilinear_sample(img, rows, cols):
    """Sample img at fractional (row, col) grids with edge clamping.

    rows and cols are 1-D coordinate vectors; the result has shape
    (len(rows), len(cols)). Interpolation is separable: rows first,
    then columns.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = c - c0
    tmp = img[r0] * (1.0 - fr) + img[r1] * fr
    return tmp[:, c0] * (1.0 - fc) + tmp[:, c1] * fc
