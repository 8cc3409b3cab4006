"""Weight-prediction network: stem conv, dual frame/channel attention,
multi-rate dilated branches with spatial attention, softmax head.

The forward pass takes K downsampled Y planes in [0,1] and produces K
per-pixel weight maps that sum to one at every pixel. All tensors follow
the (frames K, channels C, height, width) layout.

Parameters are stored float32 (the checkpoint dtype); arithmetic runs in
float64 via the autodiff graph, which also provides training gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, IoError, ShapeError

NET_MAGIC = b"MEFN"
NET_VERSION = 1
SPATIAL_KERNEL = 7


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """All learnable tensors plus the hyperparameters that shape them."""

    k_frames: int
    channels: int
    rates: tuple
    stem_w: np.ndarray   # (C, 1, 3, 3)
    stem_b: np.ndarray   # (C,)
    ca_w1: np.ndarray    # (C/4, C)
    ca_w2: np.ndarray    # (C, C/4)
    fa_w1: np.ndarray    # (K, K)
    fa_w2: np.ndarray    # (K, K)
    dil_w: tuple         # per rate: (C, C, 3, 3)
    dil_b: tuple         # per rate: (C,)
    att_w: tuple         # per rate: (1, 2, 7, 7)
    att_b: tuple         # per rate: (1,)
    head_w: np.ndarray   # (1, len(rates)*C, 3, 3)
    head_b: np.ndarray   # (1,)

    def __post_init__(self):
        if self.channels % 4 != 0:
            raise ShapeError("channel count must be divisible by 4")
        if self.k_frames < 1:
            raise ShapeError("k_frames must be >= 1")

    def items(self):
        """(name, array) pairs in declaration order; order is the file order."""
        out = [("stem_w", self.stem_w), ("stem_b", self.stem_b),
               ("ca_w1", self.ca_w1), ("ca_w2", self.ca_w2),
               ("fa_w1", self.fa_w1), ("fa_w2", self.fa_w2)]
        for i, r in enumerate(self.rates):
            out.append((f"dil_w{r}", self.dil_w[i]))
            out.append((f"dil_b{r}", self.dil_b[i]))
        for i, r in enumerate(self.rates):
            out.append((f"att_w{r}", self.att_w[i]))
            out.append((f"att_b{r}", self.att_b[i]))
        out.append(("head_w", self.head_w))
        out.append(("head_b", self.head_b))
        return out

    def replace_tensors(self, arrays):
        """New params with tensors taken from a name->array mapping."""
        rates = self.rates
        return NetworkParams(
            k_frames=self.k_frames, channels=self.channels, rates=rates,
            stem_w=arrays["stem_w"], stem_b=arrays["stem_b"],
            ca_w1=arrays["ca_w1"], ca_w2=arrays["ca_w2"],
            fa_w1=arrays["fa_w1"], fa_w2=arrays["fa_w2"],
            dil_w=tuple(arrays[f"dil_w{r}"] for r in rates),
            dil_b=tuple(arrays[f"dil_b{r}"] for r in rates),
            att_w=tuple(arrays[f"att_w{r}"] for r in rates),
            att_b=tuple(arrays[f"att_b{r}"] for r in rates),
            head_w=arrays["head_w"], head_b=arrays["head_b"])


def init_params(k_frames, channels=24, rates=(2, 4, 8), seed=0):
    """Fan-in-scaled uniform kernels, zero biases, fully seed-determined.

    `seed` may be an int or an existing numpy Generator (the training loop
    passes its own so that initialization and shuffling share one stream).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = channels
    k = k_frames

    def kernel(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    zeros = lambda shape: np.zeros(shape, np.float32)
    return NetworkParams(
        k_frames=k, channels=c, rates=tuple(rates),
        stem_w=kernel((c, 1, 3, 3), 9), stem_b=zeros(c),
        ca_w1=kernel((c // 4, c), c), ca_w2=kernel((c, c // 4), c // 4),
        fa_w1=kernel((k, k), k), fa_w2=kernel((k, k), k),
        dil_w=tuple(kernel((c, c, 3, 3), c * 9) for _ in rates),
        dil_b=tuple(zeros(c) for _ in rates),
        att_w=tuple(kernel((1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL),
                           2 * SPATIAL_KERNEL ** 2) for _ in rates),
        att_b=tuple(zeros(1) for _ in rates),
        head_w=kernel((1, len(rates) * c, 3, 3), len(rates) * c * 9),
        head_b=zeros(1))


# ---------------------------------------------------------------------------
# Forward pass (autodiff graph; call under ad.no_grad() for inference)
# ---------------------------------------------------------------------------

def params_to_values(params, requires_grad=False):
    """Lift parameter arrays into float64 autodiff Values."""
    return {name: ad.Value(arr.astype(np.float64), requires_grad=requires_grad)
            for name, arr in params.items()}


def _stem_graph(ylow, pv):
    # (K, H, W) -> (K, C, H, W); no activation here, the attention blocks
    # carry the nonlinearity (keeps loss smooth enough to verify gradients
    # against finite differences)
    k, h, w = ylow.shape
    x = ad.Value(ylow.reshape(k, 1, h, w))
    return ad.conv2d(x, pv["stem_w"], pv["stem_b"])


def _cfca_graph(y, pv):
    """Channel gating from per-frame channel means, then frame gating from
    per-channel frame means; both MLPs are bias-free two-layer blocks."""
    k, c = y.shape[0], y.shape[1]
    pooled_c = ad.vmean(y, axis=(2, 3))                       # (K, C)
    hidden = ad.relu(ad.matmul(pooled_c, ad.transpose(pv["ca_w1"], (1, 0))))
    gate_c = ad.sigmoid(ad.matmul(hidden, ad.transpose(pv["ca_w2"], (1, 0))))
    yc = ad.mul(y, ad.reshape(gate_c, (k, c, 1, 1)))

    pooled_f = ad.vmean(yc, axis=(2, 3))                      # (K, C)
    per_chan = ad.transpose(pooled_f, (1, 0))                 # (C, K)
    hidden_f = ad.relu(ad.matmul(per_chan, ad.transpose(pv["fa_w1"], (1, 0))))
    gate_f = ad.sigmoid(ad.matmul(hidden_f, ad.transpose(pv["fa_w2"], (1, 0))))
    gate_f = ad.transpose(gate_f, (1, 0))                     # (K, C)
    return ad.mul(yc, ad.reshape(gate_f, (k, c, 1, 1)))


def _disa_graph(x, pv, rates):
    """Dilated branches, each gated by a spatial map built from its own
    channel mean/max statistics, then fused by the head convolution."""
    branches = []
    for r in rates:
        d = ad.conv2d(x, pv[f"dil_w{r}"], pv[f"dil_b{r}"], dilation=r)
        cmean = ad.vmean(d, axis=1, keepdims=True)
        cmax = ad.vmax(d, axis=1, keepdims=True)
        stats = ad.concat([cmean, cmax], axis=1)              # (K, 2, H, W)
        gate = ad.sigmoid(ad.conv2d(stats, pv[f"att_w{r}"], pv[f"att_b{r}"]))
        branches.append(ad.mul(d, gate))
    merged = ad.concat(branches, axis=1)                      # (K, 3C, H, W)
    return ad.conv2d(merged, pv["head_w"], pv["head_b"])      # (K, 1, H, W)


def forward_graph(ylow, pv, rates):
    """Full graph: stem -> CFCA -> DISA -> per-pixel softmax over frames."""
    k, h, w = ylow.shape
    feats = _stem_graph(ylow, pv)
    fused = _cfca_graph(feats, pv)
    raw = _disa_graph(fused, pv, rates)
    return ad.softmax(ad.reshape(raw, (k, h, w)), axis=0)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def conv2d(x, kernel, bias=None, dilation=1):
    """Plain-array stride-1 same-padded convolution (cross-correlation)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv2d expects (N,C,H,W) input and (O,C,kh,kw) kernel")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape[1]}, kernel {kernel.shape[1]}")
    with ad.no_grad():
        out = ad.conv2d(ad.Value(x), ad.Value(kernel),
                        ad.Value(bias) if bias is not None else None,
                        dilation=dilation)
    return out.data


def cfca_forward(y, params):
    """Apply the dual attention block to a (K, C, H, W) feature tensor."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 4 or y.shape[0] != params.k_frames or y.shape[1] != params.channels:
        raise ShapeError(f"expected ({params.k_frames}, {params.channels}, H, W), "
                         f"got {y.shape}")
    with ad.no_grad():
        return _cfca_graph(ad.Value(y), params_to_values(params)).data


def disa_forward(x_k, params):
    """One frame's (C, H, W) features -> raw (H, W) weight map."""
    x_k = np.asarray(x_k, dtype=np.float64)
    if x_k.ndim != 3 or x_k.shape[0] != params.channels:
        raise ShapeError(f"expected ({params.channels}, H, W), got {x_k.shape}")
    with ad.no_grad():
        raw = _disa_graph(ad.Value(x_k[None]), params_to_values(params), params.rates)
    return raw.data[0, 0]


def network_forward(ylow, params):
    """K downsampled Y planes in [0,1] -> K normalized weight maps."""
    ylow = np.asarray(ylow, dtype=np.float64)
    if ylow.ndim != 3 or ylow.shape[0] != params.k_frames:
        raise ShapeError(f"expected ({params.k_frames}, H, W), got {ylow.shape}")
    with ad.no_grad():
        return forward_graph(ylow, params_to_values(params), params.rates).data


# ---------------------------------------------------------------------------
# Checkpoint format ("MEFN")
# ---------------------------------------------------------------------------

def save_params(params: NetworkParams, path):
    """magic, u16 version, u16 K, u16 C, u16 n_rates, rates, then each
    tensor in declaration order as u8 ndim, u32 dims, f32 LE data."""
    chunks = [NET_MAGIC,
              struct.pack("<HHHH", NET_VERSION, params.k_frames,
                          params.channels, len(params.rates))]
    chunks.append(struct.pack(f"<{len(params.rates)}H", *params.rates))
    for _, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_params(path) -> NetworkParams:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12:
        raise IoError(f"{path}: truncated header")
    if data[:4] != NET_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, k, c, n_rates = struct.unpack("<HHHH", data[4:12])
    if version != NET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    if len(data) < pos + 2 * n_rates:
        raise IoError(f"{path}: truncated rate list")
    rates = struct.unpack(f"<{n_rates}H", data[pos:pos + 2 * n_rates])
    pos += 2 * n_rates

    template = init_params(k, c, rates, seed=0)
    arrays = {}
    for name, ref in template.items():
        if pos + 1 > len(data):
            raise IoError(f"{path}: truncated at tensor {name}")
        ndim = data[pos]
        pos += 1
        if pos + 4 * ndim > len(data):
            raise IoError(f"{path}: truncated dims of {name}")
        dims = struct.unpack(f"<{ndim}I", data[pos:pos + 4 * ndim])
        pos += 4 * ndim
        if dims != ref.shape:
            raise FormatError(f"{path}: tensor {name} has shape {dims}, "
                              f"expected {ref.shape}")
        count = int(np.prod(dims)) if dims else 1
        if pos + 4 * count > len(data):
            raise IoError(f"{path}: truncated data of {name}")
        arr = np.frombuffer(data[pos:pos + 4 * count], dtype="<f4").reshape(dims)
        pos += 4 * count
        if np.any(np.isnan(arr)):
            raise FormatError(f"{path}: tensor {name} contains NaN")
        arrays[name] = arr.copy()
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return template.replace_tensors(arrays)
