import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lutfuse import (ConfigError, ExposureStack, FormatError, IoError,
                     LutMatrix, MetadataError, StackShapeError, choose_rate,
                     downsample_bilinear, load_sequence, read_lut, rgb_to_yuv,
                     write_lut, yuv_to_rgb)
from lutfuse.imgio import (read_ppm, resize_bilinear, rgb_to_yuv_planes,
                           write_png, write_ppm, yuv_to_rgb_planes)

from conftest import make_frame


# ---------------------------------------------------------------------------
# Color conversion
# ---------------------------------------------------------------------------

def test_rgb_to_yuv_black_white():
    assert rgb_to_yuv(0, 0, 0) == (0, 128, 128)
    assert rgb_to_yuv(255, 255, 255) == (255, 128, 128)


def test_rgb_to_yuv_saturated_red():
    # hand oracle: Y = round(0.299*255) = 76; U = round((0-76)*0.492+128) = 91;
    # V = (255-76)*0.877+128 = 285 -> clamped
    assert rgb_to_yuv(255, 0, 0) == (76, 91, 255)


def test_yuv_roundtrip_grid():
    # all triplets at stride 17 per channel; the inverse can only be close
    # where the chroma stayed inside [0,255]
    vals = np.arange(0, 256, 17, dtype=np.uint8)
    r, g, b = np.meshgrid(vals, vals, vals, indexing="ij")
    r, g, b = r.ravel(), g.ravel(), b.ravel()
    y, u, v = rgb_to_yuv_planes(r[None], g[None], b[None])
    rr, gg, bb = yuv_to_rgb_planes(y, u, v)

    yf = np.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)
    u_raw = (b - yf) * 0.492 + 128.0
    v_raw = (r - yf) * 0.877 + 128.0
    in_gamut = (u_raw > -0.5) & (u_raw < 255.5) & (v_raw > -0.5) & (v_raw < 255.5)

    err = np.stack([np.abs(rr[0].astype(int) - r.astype(int)),
                    np.abs(gg[0].astype(int) - g.astype(int)),
                    np.abs(bb[0].astype(int) - b.astype(int))])
    assert err[:, in_gamut].max() <= 2
    # clamped corners lose information but stay bounded
    assert err.max() <= 40


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
@settings(max_examples=60, deadline=None)
def test_rgb_to_yuv_range(r, g, b):
    y, u, v = rgb_to_yuv(r, g, b)
    for c in (y, u, v):
        assert 0 <= c <= 255


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def test_downsample_s1_identity():
    p = np.arange(12, dtype=np.uint8).reshape(3, 4)
    out = downsample_bilinear(p, 1)
    assert np.array_equal(out, p.astype(np.float64) / 255.0)


def test_downsample_constant():
    p = np.full((8, 8), 128, np.uint8)
    out = downsample_bilinear(p, 4)
    assert out.shape == (2, 2)
    assert np.allclose(out, 128 / 255.0)


def test_downsample_2x2_hand_case():
    # sampling coordinate (0.5, 0.5) averages all four pixels
    p = np.array([[0, 2], [4, 6]], np.uint8)
    out = downsample_bilinear(p, 2)
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(3 / 255.0, abs=1e-15)


def test_downsample_rejects_bad_rate():
    with pytest.raises(ConfigError):
        downsample_bilinear(np.zeros((4, 4), np.uint8), 0)


def test_downsample_output_dims_ceil():
    p = np.zeros((10, 7), np.uint8)
    assert downsample_bilinear(p, 3).shape == (4, 3)


def test_resize_identity_exact():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (5, 9))
    assert np.array_equal(resize_bilinear(img, 5, 9), img)


def test_choose_rate():
    assert choose_rate(512, 512, 128) == 4
    assert choose_rate(128, 128, 128) == 1
    assert choose_rate(4096, 3072, 128) == 24
    assert choose_rate(100, 100, 128) == 1


# ---------------------------------------------------------------------------
# Stack construction
# ---------------------------------------------------------------------------

def test_stack_shape_mismatch():
    a = make_frame(np.zeros((4, 4), np.uint8))
    b = make_frame(np.zeros((4, 5), np.uint8))
    with pytest.raises(StackShapeError):
        ExposureStack([a, b], [0.0, 1.0])


def test_stack_ev_count_mismatch():
    a = make_frame(np.zeros((4, 4), np.uint8))
    with pytest.raises(MetadataError):
        ExposureStack([a], [0.0, 1.0])


def test_stack_decreasing_evs_rejected():
    a = make_frame(np.zeros((4, 4), np.uint8))
    b = make_frame(np.zeros((4, 4), np.uint8))
    with pytest.raises(MetadataError):
        ExposureStack([a, b], [1.0, 0.0])


# ---------------------------------------------------------------------------
# Sequence loading
# ---------------------------------------------------------------------------

def test_load_sequence_pngs(tmp_path):
    rng = np.random.default_rng(1)
    paths = []
    for i in range(3):
        arr = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        p = tmp_path / f"f{i}.png"
        write_png(p, arr)
        paths.append(str(p))
    stack = load_sequence(paths, [-2.0, 0.0, 2.0])
    assert stack.k == 3
    assert stack.height == 64 and stack.width == 64


def test_load_sequence_size_mismatch(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((8, 8), np.uint8))
    write_png(tmp_path / "b.png", np.zeros((8, 9), np.uint8))
    with pytest.raises(StackShapeError):
        load_sequence([str(tmp_path / "a.png"), str(tmp_path / "b.png")], [0, 1])


def test_load_sequence_grayscale_chroma(tmp_path):
    write_png(tmp_path / "g.png", np.arange(64, dtype=np.uint8).reshape(8, 8))
    stack = load_sequence([str(tmp_path / "g.png")], [0.0])
    assert stack.k == 1
    assert np.all(stack.frames[0].u == 128)
    assert np.all(stack.frames[0].v == 128)


def test_load_sequence_unreadable(tmp_path):
    with pytest.raises(IoError):
        load_sequence([str(tmp_path / "missing.png")], [0.0])


def test_load_sequence_nonincreasing_evs(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((4, 4), np.uint8))
    write_png(tmp_path / "b.png", np.zeros((4, 4), np.uint8))
    with pytest.raises(MetadataError):
        load_sequence([str(tmp_path / "a.png"), str(tmp_path / "b.png")], [0.0, 0.0])


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", rgb)
    kind, back = read_ppm(tmp_path / "x.ppm")
    assert kind == "rgb"
    assert np.array_equal(back, rgb)
    gray = rng.integers(0, 256, (7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "y.pgm", gray)
    kind, back = read_ppm(tmp_path / "y.pgm")
    assert kind == "gray"
    assert np.array_equal(back, gray)


# ---------------------------------------------------------------------------
# LUT file format
# ---------------------------------------------------------------------------

def test_lut_file_size(tmp_path):
    lut = LutMatrix(np.full((3, 256), 0.5, np.float32))
    path = tmp_path / "t.mefl"
    write_lut(lut, path)
    assert path.stat().st_size == 4 + 2 + 2 + 3 * 256 * 4 == 3080


def test_lut_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(3)
    for i in range(20):
        k = int(rng.integers(1, 7))
        table = rng.uniform(0.01, 1.0, (k, 256)).astype(np.float32)
        lut = LutMatrix(table)
        path = tmp_path / f"r{i}.mefl"
        write_lut(lut, path)
        back = read_lut(path)
        assert np.array_equal(back.table, lut.table)


def test_lut_bad_magic(tmp_path):
    path = tmp_path / "bad.mefl"
    path.write_bytes(b"XXXX" + bytes(3076))
    with pytest.raises(FormatError):
        read_lut(path)


def test_lut_truncated(tmp_path):
    lut = LutMatrix(np.full((2, 256), 0.25, np.float32))
    path = tmp_path / "t.mefl"
    write_lut(lut, path)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(IoError):
        read_lut(path)


def test_lut_nan_rejected(tmp_path):
    lut = LutMatrix(np.full((1, 256), 0.5, np.float32))
    path = tmp_path / "nan.mefl"
    write_lut(lut, path)
    data = bytearray(path.read_bytes())
    data[8:12] = np.array([np.nan], "<f4").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_lut(path)


def test_lut_invariants():
    with pytest.raises(FormatError):
        LutMatrix(np.full((2, 256), -0.1, np.float32))
    with pytest.raises(FormatError):
        LutMatrix(np.zeros((2, 256), np.float32))  # zero column sums
