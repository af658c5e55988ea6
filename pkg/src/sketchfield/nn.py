"""Minimal reverse-mode tensor kernels for the three small networks.

Float32 semantics on a fixed op set: 3x3 conv (stride 1 or 2, same padding),
instance norm, silu, dense layers, channel concat, nearest upsample, 2x2
average pool, sinusoidal timestep embeddings, and an embedding-row gather.
Convolutions run as im2col reshapes feeding BLAS matmuls; backward passes
are exact transposes of the forward gathers. grad_check compares every
analytic gradient against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

_NORM_EPS = 1e-5


class Tensor:
    """A node on the backward tape: numpy payload + gradient closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() starts from a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


class Parameter(Tensor):
    """Named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name


def zero_grad(params):
    for p in params:
        p.grad = None


def assert_finite(arr: np.ndarray, what: str = "tensor"):
    if not np.isfinite(arr).all():
        raise ParameterError(f"{what} contains NaN or Inf")


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def _same_pads(size: int, stride: int):
    out = -(-size // stride)
    total = max((out - 1) * stride + 3 - size, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, weight: Parameter, bias: Parameter, stride: int = 1) -> Tensor:
    """3x3 cross-correlation, same padding, stride 1 or 2."""
    if stride not in (1, 2):
        raise ParameterError("stride must be 1 or 2")
    if x.data.ndim != 4:
        raise ShapeError("conv2d expects (batch, channels, h, w)")
    n, c, h, w = x.data.shape
    oc, wc, kh, kw = weight.data.shape
    if (kh, kw) != (3, 3) or wc != c:
        raise ShapeError(f"weight {weight.data.shape} does not fit input channels {c}")
    if bias.data.shape != (oc,):
        raise ShapeError("bias shape mismatch")
    oh, pt, pb = _same_pads(h, stride)
    ow, pl, pr = _same_pads(w, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = np.empty((n, oh, ow, c, 3, 3), dtype=xp.dtype)
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
            cols[:, :, :, :, ky, kx] = patch.transpose(0, 2, 3, 1)
    m = cols.reshape(n * oh * ow, c * 9)
    wr = weight.data.reshape(oc, c * 9)
    out = m @ wr.T + bias.data
    y = np.ascontiguousarray(out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))

    def backward(go):
        gor = np.ascontiguousarray(go.transpose(0, 2, 3, 1)).reshape(n * oh * ow, oc)
        if weight.requires_grad:
            weight._accumulate((gor.T @ m).reshape(weight.data.shape))
        if bias.requires_grad:
            bias._accumulate(gor.sum(axis=0))
        if x.requires_grad:
            dcols = (gor @ wr).reshape(n, oh, ow, c, 3, 3)
            dxp = np.zeros_like(xp)
            for ky in range(3):
                for kx in range(3):
                    dest = dxp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
                    dest += dcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
            x._accumulate(dxp[:, :, pt:pt + h, pl:pl + w])

    return Tensor(y, parents=(x, weight, bias), backward=backward)


def instance_norm(x: Tensor, scale: Parameter, shift: Parameter) -> Tensor:
    """Per-(batch, channel) normalization over spatial dims, then affine.

    A 1x1 spatial input skips normalization (variance undefined) and only
    applies the affine pair.
    """
    if x.data.ndim != 4:
        raise ShapeError("instance_norm expects (batch, channels, h, w)")
    n, c, h, w = x.data.shape
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ShapeError("affine parameters must have one entry per channel")
    gamma = scale.data.reshape(1, c, 1, 1)
    beta = shift.data.reshape(1, c, 1, 1)
    if h * w == 1:
        y = gamma * x.data + beta

        def backward_affine(go):
            if scale.requires_grad:
                scale._accumulate((go * x.data).sum(axis=(0, 2, 3)))
            if shift.requires_grad:
                shift._accumulate(go.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                x._accumulate(go * gamma)

        return Tensor(y, parents=(x, scale, shift), backward=backward_affine)

    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(_NORM_EPS, dtype=x.data.dtype))
    xhat = (x.data - mu) * inv
    y = gamma * xhat + beta

    def backward(go):
        if scale.requires_grad:
            scale._accumulate((go * xhat).sum(axis=(0, 2, 3)))
        if shift.requires_grad:
            shift._accumulate(go.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = go * gamma
            m1 = dxhat.mean(axis=(2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    return Tensor(y, parents=(x, scale, shift), backward=backward)


def silu(x: Tensor) -> Tensor:
    t = np.exp(-np.abs(x.data))
    sig = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    y = x.data * sig

    def backward(go):
        if x.requires_grad:
            x._accumulate(go * (sig + x.data * sig * (1.0 - sig)))

    return Tensor(y, parents=(x,), backward=backward)


def linear(x: Tensor, weight: Parameter, bias: Parameter) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("linear expects (batch, features)")
    if weight.data.ndim != 2 or weight.data.shape[0] != x.data.shape[1]:
        raise ShapeError("weight does not fit input features")
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError("bias shape mismatch")
    y = x.data @ weight.data + bias.data

    def backward(go):
        if weight.requires_grad:
            weight._accumulate(x.data.T @ go)
        if bias.requires_grad:
            bias._accumulate(go.sum(axis=0))
        if x.requires_grad:
            x._accumulate(go @ weight.data.T)

    return Tensor(y, parents=(x, weight, bias), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (batch, channels) bias against a
    (batch, channels, h, w) map, broadcast over space."""
    bias_mode = a.data.ndim == 4 and b.data.ndim == 2 and a.data.shape[:2] == b.data.shape
    if not bias_mode and a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    rhs = b.data[:, :, None, None] if bias_mode else b.data
    y = a.data + rhs

    def backward(go):
        if a.requires_grad:
            a._accumulate(go)
        if b.requires_grad:
            b._accumulate(go.sum(axis=(2, 3)) if bias_mode else go)

    return Tensor(y, parents=(a, b), backward=backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects image tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError("concat_channels needs matching batch and spatial dims")
    y = np.concatenate([a.data, b.data], axis=1)
    ca = a.data.shape[1]

    def backward(go):
        if a.requires_grad:
            a._accumulate(go[:, :ca])
        if b.requires_grad:
            b._accumulate(go[:, ca:])

    return Tensor(y, parents=(a, b), backward=backward)


def avgpool2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError("avgpool2 needs even spatial dims")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(go):
        if x.requires_grad:
            g = np.repeat(np.repeat(go, 2, axis=2), 2, axis=3) * np.asarray(0.25, x.data.dtype)
            x._accumulate(g)

    return Tensor(y, parents=(x,), backward=backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(go):
        if x.requires_grad:
            x._accumulate(go.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return Tensor(y, parents=(x,), backward=backward)


def take_rows(table: Parameter, indices) -> Tensor:
    """Embedding-table read: rows of a (rows, dim) parameter by index."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows expects a flat index list")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= table.data.shape[0]:
        raise ParameterError("embedding index out of range")
    y = table.data[idx]

    def backward(go):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, go)
            table._accumulate(g)

    return Tensor(y, parents=(table,), backward=backward)


def sinusoidal_embedding(t: int, dim: int) -> Tensor:
    """Standard diffusion timestep encoding: half sin, half cos at
    frequencies 10000^(-2i/dim)."""
    if dim % 2 or dim <= 0:
        raise ParameterError("embedding dim must be even and positive")
    if t < 0:
        raise ParameterError("timestep must be nonnegative")
    return Tensor(sinusoidal_embedding_array(np.array([t]), dim))


def sinusoidal_embedding_array(ts: np.ndarray, dim: int) -> np.ndarray:
    """Batched constant form of sinusoidal_embedding: (len(ts), dim) f32."""
    if dim % 2 or dim <= 0:
        raise ParameterError("embedding dim must be even and positive")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * 2.0 * np.arange(half) / dim)
    ang = np.asarray(ts, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError("mse operands must share a shape")
    diff = a.data - b.data
    y = np.asarray((diff * diff).mean(), dtype=a.data.dtype)
    scale = 2.0 / diff.size

    def backward(go):
        g = go * scale * diff
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor(y, parents=(a, b), backward=backward)


# ---------------------------------------------------------------------------
# Layer bundles
# ---------------------------------------------------------------------------

@dataclass
class Conv2d:
    weight: Parameter
    bias: Parameter
    stride: int = 1

    @classmethod
    def create(cls, name, c_in, c_out, rng, stride=1, w_scale=1.0):
        std = w_scale * np.sqrt(2.0 / (c_in * 9))
        w = rng.normal(0.0, std, size=(c_out, c_in, 3, 3)).astype(np.float32)
        return cls(Parameter(f"{name}.w", w),
                   Parameter(f"{name}.b", np.zeros(c_out, dtype=np.float32)),
                   stride)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride)

    def params(self):
        return [self.weight, self.bias]


@dataclass
class InstanceNorm:
    scale: Parameter
    shift: Parameter

    @classmethod
    def create(cls, name, channels):
        return cls(Parameter(f"{name}.scale", np.ones(channels, dtype=np.float32)),
                   Parameter(f"{name}.shift", np.zeros(channels, dtype=np.float32)))

    def __call__(self, x):
        return instance_norm(x, self.scale, self.shift)

    def params(self):
        return [self.scale, self.shift]


@dataclass
class Dense:
    weight: Parameter
    bias: Parameter

    @classmethod
    def create(cls, name, f_in, f_out, rng, w_scale=1.0):
        std = w_scale * np.sqrt(2.0 / f_in)
        w = rng.normal(0.0, std, size=(f_in, f_out)).astype(np.float32)
        return cls(Parameter(f"{name}.w", w),
                   Parameter(f"{name}.b", np.zeros(f_out, dtype=np.float32)))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(make_loss, leaves, eps=1e-3, max_coords_per_leaf=None, rng=None):
    """Max relative error between backprop and central finite differences.

    Leaves are upcast to float64 for the check (the ops preserve dtype), so
    difference-quotient noise stays far below the 1e-3 acceptance band.
    When max_coords_per_leaf is set, that many coordinates per leaf are
    sampled instead of sweeping every element.
    """
    originals = [leaf.data for leaf in leaves]
    flags = [leaf.requires_grad for leaf in leaves]
    for leaf in leaves:
        leaf.data = leaf.data.astype(np.float64)
        leaf.requires_grad = True
    try:
        for leaf in leaves:
            leaf.grad = None
        make_loss().backward()
        analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy()
                    for l in leaves]
        worst = 0.0
        for leaf, ana in zip(leaves, analytic):
            size = leaf.data.size
            if max_coords_per_leaf is not None and size > max_coords_per_leaf:
                picks = (rng or np.random.default_rng(0)).choice(
                    size, size=max_coords_per_leaf, replace=False)
            else:
                picks = range(size)
            flat = leaf.data.reshape(-1)
            for i in picks:
                keep = flat[i]
                flat[i] = keep + eps
                hi = float(make_loss().data)
                flat[i] = keep - eps
                lo = float(make_loss().data)
                flat[i] = keep
                numeric = (hi - lo) / (2 * eps)
                a = float(ana.reshape(-1)[i])
                rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
                worst = max(worst, rel)
        return worst
    finally:
        for leaf, data, flag in zip(leaves, originals, flags):
            leaf.data = data
            leaf.requires_grad = flag
            leaf.grad = None


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, state: AdamState, learning_rate: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in params:
        if p.grad is None:
            continue
        g = p.grad.astype(np.float32)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.data)
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p.data -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)


def cosine_lr(step: int, total_steps: int, initial_rate: float) -> float:
    if not 0 <= step <= total_steps:
        raise ParameterError("step outside [0, total_steps]")
    return initial_rate * (1.0 + np.cos(np.pi * step / total_steps)) / 2.0


# ---------------------------------------------------------------------------
# Checkpoint format: magic "CKPT", u8 version, u32 count, then per parameter
# u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data (little-endian).
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


def checkpoint_to_bytes(params) -> bytes:
    out = [CKPT_MAGIC, struct.pack("<BI", CKPT_VERSION, len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def checkpoint_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != CKPT_MAGIC:
        raise FormatError("not a CKPT payload")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported CKPT version {version}")
    off = 4 + struct.calcsize("<BI")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", data, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data[off:off + 4 * n], dtype="<f4")
        if arr.size != n:
            raise FormatError("checkpoint truncated")
        off += 4 * n
        out[name] = arr.reshape(dims).copy()
    return out


def save_checkpoint(params, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(params))


def apply_checkpoint(params, table: dict):
    for p in params:
        if p.name not in table:
            raise FormatError(f"checkpoint missing parameter {p.name}")
        if table[p.name].shape != p.data.shape:
            raise ShapeError(f"checkpoint shape mismatch for {p.name}")
        p.data = table[p.name].astype(np.float32)


def load_params_from_bytes(data: bytes, params):
    apply_checkpoint(params, checkpoint_from_bytes(data))


def load_checkpoint(params, path):
    with open(path, "rb") as fh:
        load_params_from_bytes(fh.read(), params)
