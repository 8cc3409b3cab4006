"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line
(emitted outside pytest's capture, so they show in any run). The
training-dependent criteria share one checkpoint trained here
(8 sequences x 25 epochs = 200 Adam steps).
"""

import statistics
import time

import numpy as np
import pytest

from lutfuse import (ExposureStack, LutMatrix, TrainConfig, extract_luts,
                     fuse, fuse_network, gfu_upsample, init_params,
                     load_params, loss, loss_and_gradients, mef_ssim_score,
                     normalize_weights, read_lut, save_params, ssim, train,
                     write_lut)
from lutfuse.baseline import pyramid_blend
from lutfuse.network import cfca_forward, disa_forward
from lutfuse.synth import synthetic_stack
from lutfuse.training import _lowres_planes

from test_baseline import pyramid_blend_oracle
from test_lut_engine import gfu_oracle, midtone_lut
from test_metrics import ssim_oracle
from test_network import cfca_oracle, disa_oracle
from test_training import mef_ssim_oracle


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {detail}",
                  flush=True)
    return emit


# ---------------------------------------------------------------------------
# Shared trained checkpoint (criteria 3, 4, 8)
# ---------------------------------------------------------------------------

TRAIN_CFG = TrainConfig(learning_rate=1e-3, epochs=25, seed=7)


def train_once(log_path):
    data = [synthetic_stack(64, 64, seed=100 + i) for i in range(8)]
    return train(data, TRAIN_CFG, channels=8, log_path=log_path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    log_a = root / "a.log"
    log_b = root / "b.log"
    params_a = train_once(log_a)
    params_b = train_once(log_b)
    lut = extract_luts(params_a)
    return params_a, params_b, log_a.read_text(), log_b.read_text(), lut


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(report):
    t0 = time.time()
    stack = synthetic_stack(32, 32, seed=3)
    ylow = _lowres_planes(stack)
    params = init_params(3, channels=8, seed=1)
    cfg = TrainConfig()
    _, grads = loss_and_gradients(ylow, params, cfg)

    items = params.items()
    sizes = np.array([a.size for _, a in items])
    bounds = np.cumsum(sizes)
    rng = np.random.default_rng(5)
    agree = 0
    for flat in rng.choice(sizes.sum(), size=500, replace=False):
        ti = int(np.searchsorted(bounds, flat, side="right"))
        name, arr = items[ti]
        idx = np.unravel_index(flat - (bounds[ti] - sizes[ti]), arr.shape)
        base = dict(params.items())
        up = arr.copy()
        up[idx] += np.float32(1e-3)
        dn = arr.copy()
        dn[idx] -= np.float32(1e-3)
        fd = ((loss(ylow, params.replace_tensors({**base, name: up}), cfg)
               - loss(ylow, params.replace_tensors({**base, name: dn}), cfg))
              / (float(up[idx]) - float(dn[idx])))
        g = grads[name][idx]
        # the 1e-4 floor guards near-null directions (softmax shift
        # invariance) where any h=1e-3 central difference is truncation-
        # dominated; sizeable gradients face the bare relative test
        rel = abs(g - fd) / max(abs(g), abs(fd), 1e-4)
        agree += rel < 1e-3
    elapsed = time.time() - t0
    ok = agree >= 495 and elapsed < 300
    report(1, ok, f"gradients vs central differences {agree}/500 "
                  f"(need >= 495), {elapsed:.0f}s (limit 300s)")
    assert agree >= 495
    assert elapsed < 300


# ---------------------------------------------------------------------------
# Criterion 2: oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(report):
    rng = np.random.default_rng(20)
    results = []

    params = init_params(2, channels=4, seed=21)
    y = rng.uniform(-1, 1, (2, 4, 8, 8))
    results.append(("cfca", np.abs(cfca_forward(y, params)
                                   - cfca_oracle(y, params)).max(), 1e-6))

    x = rng.uniform(-1, 1, (4, 8, 8))
    results.append(("disa", np.abs(disa_forward(x, params)
                                   - disa_oracle(x, params)).max(), 1e-6))

    stack = rng.uniform(0, 1, (3, 12, 12))
    fused = rng.uniform(0, 1, (12, 12))
    results.append(("mef_ssim", abs(mef_ssim_score(stack, fused)
                                    - mef_ssim_oracle(stack, fused)), 1e-8))

    a = rng.uniform(0, 1, (12, 12))
    b = rng.uniform(0, 1, (12, 12))
    results.append(("ssim", abs(ssim(a, b) - ssim_oracle(a, b)), 1e-8))

    g = rng.uniform(0, 1, (10, 10))
    w = rng.uniform(0, 1, (10, 10))
    results.append(("guided_filter",
                    np.abs(gfu_upsample(w, g, g, radius=2, eps=1e-4)
                           - gfu_oracle(w, g, radius=2, eps=1e-4)).max(), 1e-5))

    ys = rng.uniform(0, 1, (2, 16, 16))
    wn = normalize_weights(rng.uniform(0, 1, (2, 16, 16)))
    results.append(("pyramid_blend",
                    np.abs(pyramid_blend(ys, wn, 3)
                           - pyramid_blend_oracle(ys, wn, 3)).max(), 1e-6))

    ok = all(err < tol for _, err, tol in results)
    detail = ", ".join(f"{name} {err:.2e}<{tol:.0e}" for name, err, tol in results)
    report(2, ok, detail)
    for name, err, tol in results:
        assert err < tol, name


# ---------------------------------------------------------------------------
# Criterion 3: training progress + determinism
# ---------------------------------------------------------------------------

def test_criterion_3_training_progress(trained, report):
    params_a, params_b, log_a, log_b, _ = trained
    lines = log_a.strip().split("\n")
    first = float(lines[0].split("\t")[1])
    last = float(lines[-1].split("\t")[1])
    identical = log_a == log_b and all(
        np.array_equal(x, y) for (_, x), (_, y) in
        zip(params_a.items(), params_b.items()))
    ok = last < 0.8 * first and identical
    report(3, ok, f"25 epochs x 8 sequences (200 steps): loss {first:.4f} -> "
                  f"{last:.4f} (ratio {last / first:.3f}, need < 0.8); "
                  f"rerun bitwise identical: {identical}")
    assert last < 0.8 * first
    assert identical


# ---------------------------------------------------------------------------
# Criterion 4: LUT fidelity vs the trained network
# ---------------------------------------------------------------------------

def test_criterion_4_lut_fidelity(trained, report):
    params, _, _, _, lut = trained
    diffs = []
    for i in range(10):
        st = synthetic_stack(64, 64, seed=900 + i)
        ys = st.y_planes()
        f_net = fuse_network(st, params)
        f_lut = fuse(st, lut)
        m_net = mef_ssim_score(ys, f_net.y.astype(np.float64) / 255.0)
        m_lut = mef_ssim_score(ys, f_lut.y.astype(np.float64) / 255.0)
        diffs.append(abs(m_net - m_lut))
    mean_diff = float(np.mean(diffs))
    ok = mean_diff <= 0.05
    report(4, ok, f"mean |MEF-SSIM(network) - MEF-SSIM(LUT)| = {mean_diff:.4f} "
                  f"over 10 held-out stacks (need <= 0.05, max {max(diffs):.4f})")
    assert mean_diff <= 0.05


# ---------------------------------------------------------------------------
# Criterion 5: LUT speed advantage
# ---------------------------------------------------------------------------

def test_criterion_5_speed_trend(report):
    params = init_params(3, channels=24, seed=7)
    lut = extract_luts(params, probe_size=16)
    stack = synthetic_stack(512, 512, seed=11)

    def medtime(fn, repeat=10):
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return statistics.median(times)

    t_lut = medtime(lambda: fuse(stack, lut, threads=1))
    t_net = medtime(lambda: fuse_network(stack, params, threads=1))
    ratio = t_lut / t_net
    ok = ratio <= 1 / 3
    report(5, ok, f"512x512, R=10: LUT fuse {t_lut * 1e3:.1f} ms vs network "
                  f"fuse {t_net * 1e3:.1f} ms, ratio {ratio:.3f} (need <= 0.333)")
    assert ratio <= 1 / 3


# ---------------------------------------------------------------------------
# Criterion 6: pipeline invariants
# ---------------------------------------------------------------------------

def test_criterion_6_pipeline_invariants(report):
    checks = []

    rng = np.random.default_rng(60)
    w = normalize_weights(rng.uniform(0, 3, (4, 8, 8)))
    checks.append(("weight sums 1+-1e-6",
                   np.abs(w.sum(axis=0) - 1.0).max() < 1e-6))
    checks.append(("all-zero weights normalize uniformly",
                   np.allclose(normalize_weights(np.zeros((4, 3, 3))), 0.25)))

    stack1 = synthetic_stack(32, 32, seed=61)
    frame = stack1.frames[0]
    single = ExposureStack([frame], [0.0])
    out1 = fuse(single, LutMatrix(np.full((1, 256), 0.4, np.float32)))
    checks.append(("K=1 fuse is identity",
                   np.array_equal(out1.y, frame.y)
                   and np.array_equal(out1.u, frame.u)
                   and np.array_equal(out1.v, frame.v)))

    lut = midtone_lut(3)
    same = ExposureStack([frame] * 3, [-1.0, 0.0, 1.0])
    out_same = fuse(same, lut)
    checks.append(("identical-frame fuse within 1 step",
                   np.abs(out_same.y.astype(int) - frame.y.astype(int)).max() <= 1))

    guide_lo = rng.uniform(0, 1, (8, 8))
    guide_hi = rng.uniform(0, 1, (32, 32))
    const = gfu_upsample(np.full((8, 8), 0.61), guide_lo, guide_hi)
    checks.append(("GFU constancy", np.abs(const - 0.61).max() < 1e-6))

    perm = [2, 0, 1]
    base_out = fuse(stack1, lut)
    pstack = ExposureStack.__new__(ExposureStack)
    object.__setattr__(pstack, "frames", tuple(stack1.frames[i] for i in perm))
    object.__setattr__(pstack, "evs", tuple(stack1.evs[i] for i in perm))
    perm_out = fuse(pstack, LutMatrix(lut.table[perm]))
    checks.append(("frame-permutation equivariance (bitwise)",
                   np.array_equal(base_out.y, perm_out.y)
                   and np.array_equal(base_out.u, perm_out.u)
                   and np.array_equal(base_out.v, perm_out.v)))

    ok = all(flag for _, flag in checks)
    report(6, ok, "; ".join(f"{name}: {'ok' if flag else 'FAIL'}"
                            for name, flag in checks))
    for name, flag in checks:
        assert flag, name


# ---------------------------------------------------------------------------
# Criterion 7: format round-trips
# ---------------------------------------------------------------------------

def test_criterion_7_format_roundtrips(tmp_path, report):
    rng = np.random.default_rng(70)
    lut_ok = 0
    for i in range(100):
        k = int(rng.integers(1, 7))
        lut = LutMatrix(rng.uniform(1e-3, 1.0, (k, 256)).astype(np.float32))
        path = tmp_path / "l.mefl"
        write_lut(lut, path)
        first = path.read_bytes()
        back = read_lut(path)
        write_lut(back, path)
        lut_ok += (np.array_equal(back.table, lut.table)
                   and path.read_bytes() == first)

    net_ok = 0
    for i in range(100):
        k = int(rng.integers(1, 5))
        c = 4 * int(rng.integers(1, 4))
        params = init_params(k, channels=c, seed=int(rng.integers(1 << 31)))
        path = tmp_path / "p.mefn"
        save_params(params, path)
        first = path.read_bytes()
        back = load_params(path)
        save_params(back, path)
        same = all(np.array_equal(x, y) for (_, x), (_, y)
                   in zip(params.items(), back.items()))
        net_ok += same and path.read_bytes() == first

    ok = lut_ok == 100 and net_ok == 100
    report(7, ok, f"MEFL {lut_ok}/100 bitwise, MEFN {net_ok}/100 bitwise")
    assert lut_ok == 100
    assert net_ok == 100


# ---------------------------------------------------------------------------
# Criterion 8: LUT monotone-trend diagnostic (reported, not asserted)
# ---------------------------------------------------------------------------

def spearman(x, y):
    rx = np.argsort(np.argsort(x)).astype(np.float64)
    ry = np.argsort(np.argsort(y)).astype(np.float64)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


def test_criterion_8_monotone_trend_diagnostic(trained, report):
    params, _, _, _, lut = trained
    v = np.arange(16, 241)
    low_row = lut.table[0, 16:241].astype(np.float64)   # lowest EV
    high_row = lut.table[-1, 16:241].astype(np.float64)  # highest EV
    rho_low = spearman(v, low_row)
    rho_high = spearman(v, high_row)
    matches = (rho_low > 0) and (rho_high < 0)
    report(8, True,
           f"diagnostic only - lowest-EV row Spearman {rho_low:+.3f} "
           f"(increasing trend expected), highest-EV row {rho_high:+.3f} "
           f"(decreasing trend expected); observed trends "
           f"{'match' if matches else 'do not match'} the published curves")
    assert np.isfinite(rho_low) and np.isfinite(rho_high)
