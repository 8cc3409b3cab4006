"""Unsupervised training: structure-similarity loss over exposure stacks,
reverse-mode gradients, Adam, the epoch loop, and LUT extraction.

The loss compares the fused luminance against a per-patch "desired" image
built from the stack itself: each window's target combines the strongest
local contrast across exposures with the contrast-weighted mean structure
direction. Training runs entirely at the downsampled resolution; the
guided-filter upsampler is inference-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._num import window_sums
from .errors import ConfigError, NumericsError, ShapeError, StackShapeError
from .imgio import LutMatrix, choose_rate, downsample_bilinear
from .network import forward_graph, init_params, network_forward, params_to_values

# Patches with less structure than this norm count as flat and score 1.
FLAT_TOL = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    epochs: int = 100
    seed: int = 0
    window: int = 7
    stability_c: float = 0.03 ** 2
    batch: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError("window must be odd and >= 3")


# ---------------------------------------------------------------------------
# MEF-SSIM score (plain numpy, box-sum formulation)
# ---------------------------------------------------------------------------

def mef_ssim_score(ystack, yfused, window=7, stability_c=0.03 ** 2):
    """Structure similarity between a fused plane and its exposure stack.

    For every window (stride 1, valid positions) the desired patch takes
    the largest mean-removed norm among the exposures as its contrast and
    the normalized sum of mean-removed patches as its structure; the patch
    score is the SSIM-style ratio between that target and the mean-removed
    fused patch, with C2 scaled by the pixel count to match the raw
    dot-product formulation. Flat windows score 1.
    """
    ystack = np.asarray(ystack, dtype=np.float64)
    yfused = np.asarray(yfused, dtype=np.float64)
    if ystack.ndim != 3:
        raise ShapeError(f"expected (K, H, W) stack, got {ystack.shape}")
    if ystack.shape[1:] != yfused.shape:
        raise ShapeError(
            f"stack {ystack.shape[1:]} and fused {yfused.shape} dimensions differ")
    k, h, w = ystack.shape
    if window > min(h, w):
        raise ShapeError(f"window {window} exceeds image side {min(h, w)}")
    n = window * window
    c2 = stability_c * n

    mu = np.stack([window_sums(ystack[i], window) for i in range(k)]) / n
    sq = np.stack([window_sums(ystack[i] * ystack[i], window) for i in range(k)])
    norms2 = np.maximum(sq - n * mu * mu, 0.0)
    norms = np.sqrt(norms2)            # c_k per patch
    chat = norms.max(axis=0)
    csum = norms.sum(axis=0)

    # || sum_k mean-removed x_k ||^2 via pairwise inner products
    s2 = norms2.sum(axis=0)
    for a in range(k):
        for b in range(a + 1, k):
            q = window_sums(ystack[a] * ystack[b], window) - n * mu[a] * mu[b]
            s2 += 2.0 * q
    s2 = np.maximum(s2, 0.0)

    mu_f = window_sums(yfused, window) / n
    fnorm2 = np.maximum(window_sums(yfused * yfused, window) - n * mu_f * mu_f, 0.0)
    cross = np.zeros_like(chat)
    for a in range(k):
        cross += window_sums(ystack[a] * yfused, window) - n * mu[a] * mu_f

    snorm = np.sqrt(s2)
    good = (chat > FLAT_TOL) & (snorm / np.maximum(csum, FLAT_TOL) > FLAT_TOL)
    safe_snorm = np.where(good, snorm, 1.0)
    dot = chat * cross / safe_snorm    # <desired, mean-removed fused>
    score = (2.0 * dot + c2) / (chat * chat + fnorm2 + c2)
    return float(np.where(good, score, 1.0).mean())


# ---------------------------------------------------------------------------
# Differentiable loss
# ---------------------------------------------------------------------------

def _desired_patches(ylow, window, stability_c):
    """Constant side of the loss: target patches, contrasts, flat mask."""
    k = ylow.shape[0]
    n = window * window
    view = np.lib.stride_tricks.sliding_window_view(ylow, (window, window),
                                                    axis=(1, 2))
    pats = view.reshape(k, -1, n)
    centered = pats - pats.mean(axis=2, keepdims=True)
    norms = np.linalg.norm(centered, axis=2)
    chat = norms.max(axis=0)
    csum = norms.sum(axis=0)
    sbar = centered.sum(axis=0)
    snorm = np.linalg.norm(sbar, axis=1)
    good = (chat > FLAT_TOL) & (snorm / np.maximum(csum, FLAT_TOL) > FLAT_TOL)
    scale = np.where(good, chat / np.where(good, snorm, 1.0), 0.0)
    desired = sbar * scale[:, None]
    return desired, chat, good, stability_c * n


def _loss_graph(ylow, pv, rates, window, stability_c):
    """1 - score, with the fused image produced by the network graph."""
    weights = forward_graph(ylow, pv, rates)
    fused = ad.vsum(ad.mul(weights, ad.Value(ylow)), axis=0)
    desired, chat, good, c2 = _desired_patches(ylow, window, stability_c)
    mask = good.astype(np.float64)

    pats = ad.extract_patches(fused, window)
    centered = ad.sub(pats, ad.vmean(pats, axis=1, keepdims=True))
    cross = ad.vsum(ad.mul(centered, ad.Value(desired)), axis=1)
    fnorm2 = ad.vsum(ad.mul(centered, centered), axis=1)
    num = ad.add(ad.mul(cross, 2.0), c2)
    den = ad.add(ad.add(fnorm2, ad.Value(chat * chat)), c2)
    per_patch = ad.div(num, den)
    score = ad.vmean(ad.add(ad.mul(per_patch, ad.Value(mask)),
                            ad.Value(1.0 - mask)))
    return ad.sub(1.0, score)


def _lowres_planes(stack, target_min=128):
    s = choose_rate(stack.height, stack.width, target_min)
    return np.stack([downsample_bilinear(f.y, s) for f in stack.frames])


def loss(stack, params, cfg: TrainConfig = TrainConfig()):
    """Training objective for one stack at its downsampled resolution."""
    value, _ = _loss_value(stack, params, cfg, want_grads=False)
    return value


def gradients(stack, params, cfg: TrainConfig = TrainConfig()):
    """Exact reverse-mode gradients of loss() for every parameter tensor."""
    _, grads = _loss_value(stack, params, cfg, want_grads=True)
    return grads


def loss_and_gradients(stack, params, cfg: TrainConfig = TrainConfig()):
    return _loss_value(stack, params, cfg, want_grads=True)


def _loss_value(stack, params, cfg, want_grads):
    ylow = stack if isinstance(stack, np.ndarray) else _lowres_planes(stack)
    if ylow.shape[0] != params.k_frames:
        raise StackShapeError(
            f"stack has {ylow.shape[0]} frames, network expects {params.k_frames}")
    if not want_grads:
        with ad.no_grad():
            node = _loss_graph(ylow, params_to_values(params), params.rates,
                               cfg.window, cfg.stability_c)
        return float(node.data), None
    pv = params_to_values(params, requires_grad=True)
    node = _loss_graph(ylow, pv, params.rates, cfg.window, cfg.stability_c)
    node.backward()
    grads = {}
    for name, _ in params.items():
        g = pv[name].grad
        if g is None:
            g = np.zeros_like(pv[name].data)
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name}")
        grads[name] = g
    return float(node.data), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_init(params):
    return {"t": 0,
            "m": {name: np.zeros(a.shape) for name, a in params.items()},
            "v": {name: np.zeros(a.shape) for name, a in params.items()}}


def adam_step(params, grads, state, cfg: TrainConfig):
    """One bias-corrected Adam update; returns (new params, new state)."""
    b1, b2 = cfg.betas
    eps = 1e-8
    t = state["t"] + 1
    new_m, new_v, updated = {}, {}, {}
    for name, arr in params.items():
        g = grads[name]
        m = b1 * state["m"][name] + (1.0 - b1) * g
        v = b2 * state["v"][name] + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        step = cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        updated[name] = (arr.astype(np.float64) - step).astype(np.float32)
        new_m[name] = m
        new_v[name] = v
    return params.replace_tensors(updated), {"t": t, "m": new_m, "v": new_v}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(dataset, cfg: TrainConfig = TrainConfig(), channels=24,
          rates=(2, 4, 8), log_path=None):
    """Seeded, deterministic epoch loop over a list of exposure stacks.

    Per epoch the visiting order is reshuffled from the same generator
    that drew the initialization, each stack contributes one Adam step,
    and the epoch's mean loss is appended to the metrics log.
    """
    if not dataset:
        raise StackShapeError("empty training dataset")
    k = dataset[0].k
    for st in dataset:
        if st.k != k:
            raise StackShapeError("all training stacks must share the frame count")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(k, channels, rates, seed=rng)
    state = adam_init(params)
    lowres = [_lowres_planes(st) for st in dataset]

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(lowres))
            losses = []
            for idx in order:
                value, grads = loss_and_gradients(lowres[idx], params, cfg)
                params, state = adam_step(params, grads, state, cfg)
                losses.append(value)
            if log_fh:
                log_fh.write(f"{epoch}\t{np.mean(losses):.9f}\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    return params


# ---------------------------------------------------------------------------
# LUT extraction
# ---------------------------------------------------------------------------

def extract_luts(params, probe_size=128):
    """Distill the network into per-exposure tables.

    Each 8-bit intensity v is probed with a stack of constant planes at
    v/255; the spatial mean of each resulting weight map becomes the
    table entry for (frame, v).
    """
    table = np.empty((params.k_frames, 256))
    for v in range(256):
        ylow = np.full((params.k_frames, probe_size, probe_size), v / 255.0)
        weights = network_forward(ylow, params)
        table[:, v] = weights.mean(axis=(1, 2))
    return LutMatrix(table.astype(np.float32))
