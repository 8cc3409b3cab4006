import numpy as np
import pytest

from lutfuse import ExposureStack, YuvImage
from lutfuse.synth import synthetic_stack


def make_frame(y, u=None, v=None):
    y = np.asarray(y, dtype=np.uint8)
    if u is None:
        u = np.full(y.shape, 128, np.uint8)
    if v is None:
        v = np.full(y.shape, 128, np.uint8)
    return YuvImage(y, np.asarray(u, np.uint8), np.asarray(v, np.uint8))


def gradient_stack(size=16, k=3):
    """Small deterministic stack with distinct per-frame ramps."""
    base = np.linspace(0, 255, size * size).reshape(size, size)
    frames = []
    for i in range(k):
        y = np.clip(base * (0.5 + 0.35 * i) + 10 * i, 0, 255).astype(np.uint8)
        u = np.clip(128 + (base / 8 - 16) * (i + 1) / k, 0, 255).astype(np.uint8)
        v = np.clip(128 - (base / 10 - 12) * (i + 1) / k, 0, 255).astype(np.uint8)
        frames.append(YuvImage(y, u, v))
    return ExposureStack(frames, [float(2 * i - k + 1) for i in range(k)])


@pytest.fixture
def small_stack():
    return gradient_stack(16, 3)


@pytest.fixture
def synth16():
    return synthetic_stack(16, 16, seed=3)
