"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap row-major numpy arrays (float32 by default, float64 when a
tighter gradient check is wanted). Every operation records a node with a
vector-Jacobian closure; ``backward`` walks the recorded graph in reverse
topological order and accumulates gradients into the participating leaves.
The graph is rebuilt on every forward pass, and a graph is only ever used
by the thread that built it.

Every op validates that its output is finite; NaN/Inf raises NumericError
at the op that produced it rather than propagating silently.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def default_dtype():
    return getattr(_state, "default_dtype", np.float32)


def set_default_dtype(dtype):
    """Set the dtype used for newly created tensors (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise NumericError(f"unsupported dtype {dtype}; use float32 or float64")
    _state.default_dtype = dtype


@contextmanager
def using_dtype(dtype):
    prev = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    # a NaN/Inf anywhere poisons the sum; one fused reduce beats isfinite().all()
    if not math.isfinite(float(arr.sum())):
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    """A dense n-d array with an optional gradient slot.

    ``data`` is always a C-contiguous float32/float64 numpy array. ``grad``
    is lazily allocated with the same shape and accumulates across backward
    calls until cleared.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor; use .detach()")
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype.type if arr.dtype.type in _FLOAT_DTYPES else default_dtype()
        arr = arr.astype(dtype, copy=False)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d arrays 0-d
        _ensure_finite(arr, "tensor()")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; use explicit ops")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named trainable tensor with Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_t")

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_t = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _node(data: np.ndarray, parents, vjp, op: str) -> Tensor:
    """Build the output tensor of an op, recording the vjp when needed."""
    _ensure_finite(data, op)
    out = Tensor.__new__(Tensor)
    if data.ndim and not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)
    out.data = data
    out.grad = None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + np.asarray(c, dtype=a.data.dtype), (a,), lambda g: (g,), "add")
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(float(b), dtype=a.data.dtype)
        return _node(a.data * c, (a,), lambda g: (g * c,), "mul")
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(a.data.dtype, copy=False),)

    return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), vjp, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape

    def vjp(g):
        return (np.broadcast_to(g / n, shape).astype(a.data.dtype, copy=False),)

    return _node(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), vjp, "mean")


def row_sums(x: Tensor) -> Tensor:
    """Sum each row of a matrix; returns shape (n,)."""
    if x.ndim != 2:
        raise ShapeError(f"row_sums: expected a matrix, got shape {x.shape}")
    n, d = x.shape

    def vjp(g):
        return (np.broadcast_to(g[:, None], (n, d)).astype(x.data.dtype, copy=False),)

    return _node(x.data.sum(axis=1), (x,), vjp, "row_sums")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _node(out, (a,), vjp, "exp")


def tlog(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)

    def vjp(g):
        return (g / ad,)

    return _node(out, (a,), vjp, "log")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return ((g * (phi + x * pdf)).astype(x.dtype, copy=False),)

    return _node(out.astype(x.dtype, copy=False), (a,), vjp, "gelu")


# -- structural ops -----------------------------------------------------------


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a matrix; duplicated indices accumulate gradient."""
    if x.ndim != 2:
        raise ShapeError(f"take_rows: expected a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def vjp(g):
        acc = np.zeros(shape, dtype=g.dtype)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(x.data[idx], (x,), vjp, "take_rows")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_rows: bad range [{start}:{stop}] for shape {x.shape}")
    shape = x.shape

    def vjp(g):
        acc = np.zeros(shape, dtype=g.dtype)
        acc[start:stop] = g
        return (acc,)

    return _node(x.data[start:stop], (x,), vjp, "slice_rows")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {x.shape}")
    shape = x.shape

    def vjp(g):
        acc = np.zeros(shape, dtype=g.dtype)
        acc[:, start:stop] = g
        return (acc,)

    return _node(x.data[:, start:stop], (x,), vjp, "slice_cols")


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows: empty input")
    width = parts[0].shape[1] if parts[0].ndim == 2 else None
    for p in parts:
        if p.ndim != 2 or p.shape[1] != width:
            raise ShapeError(f"concat_rows: inconsistent shapes {[p.shape for p in parts]}")
    counts = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + counts)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp, "concat_rows")


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols: empty input")
    height = parts[0].shape[0] if parts[0].ndim == 2 else None
    for p in parts:
        if p.ndim != 2 or p.shape[0] != height:
            raise ShapeError(f"concat_cols: inconsistent shapes {[p.shape for p in parts]}")
    counts = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + counts)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp, "concat_cols")


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d vector to every row of an (n, d) matrix."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {x.shape} and {b.shape} do not match")

    def vjp(g):
        return g, g.sum(axis=0)

    return _node(x.data + b.data[None, :], (x, b), vjp, "add_rowvec")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an (n, d) matrix by scalar s[i]."""
    if x.ndim != 2 or s.ndim != 1 or x.shape[0] != s.shape[0]:
        raise ShapeError(f"scale_rows: shapes {x.shape} and {s.shape} do not match")
    xd, sd = x.data, s.data

    def vjp(g):
        return g * sd[:, None], (g * xd).sum(axis=1)

    return _node(xd * sd[:, None], (x, s), vjp, "scale_rows")


# -- normalization and similarity ---------------------------------------------


def softmax_rows(x: Tensor, scale: float = 1.0, mask=None) -> Tensor:
    """Row-wise softmax of ``scale * x`` with max-subtraction.

    ``mask``, when given, is a boolean vector over columns; masked (False)
    columns get exactly zero weight and each row renormalizes over the
    valid columns.
    """
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows: expected a matrix, got shape {x.shape}")
    if scale <= 0:
        raise NumericError(f"softmax_rows: scale must be positive, got {scale}")
    z = x.data * x.data.dtype.type(scale)
    if mask is not None:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != (x.shape[1],):
            raise ShapeError(f"softmax_rows: mask length {valid.shape} vs {x.shape[1]} columns")
        if not valid.any():
            raise ShapeError("softmax_rows: all columns masked")
        z = np.where(valid[None, :], z, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return ((y * (g - inner) * scale).astype(y.dtype, copy=False),)

    return _node(y.astype(x.data.dtype, copy=False), (x,), vjp, "softmax_rows")


def log_softmax_rows(x: Tensor, scale: float = 1.0) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"log_softmax_rows: expected a matrix, got shape {x.shape}")
    z = x.data * x.data.dtype.type(scale)
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return ((g - soft * g.sum(axis=1, keepdims=True)) * scale,)

    return _node(out, (x,), vjp, "log_softmax_rows")


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """v / max(||v||, eps) for a vector; the zero vector maps to itself."""
    if v.ndim != 1:
        raise ShapeError(f"l2_normalize: expected a vector, got shape {v.shape}")
    if eps <= 0:
        raise NumericError("l2_normalize: eps must be positive")
    norm = float(np.linalg.norm(v.data))
    denom = max(norm, eps)
    y = v.data / denom

    def vjp(g):
        if norm > eps:
            return ((g - (g * y).sum() * y) / denom,)
        return (g / denom,)

    return _node(y, (v,), vjp, "l2_normalize")


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row of a matrix to unit length (eps-guarded)."""
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected a matrix, got shape {x.shape}")
    if eps <= 0:
        raise NumericError("l2_normalize_rows: eps must be positive")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = x.data / denom

    def vjp(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        live = norms > eps
        return (np.where(live, (g - inner * y) / denom, g / denom),)

    return _node(y, (x,), vjp, "l2_normalize_rows")


def cosine(u: Tensor, v: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of two vectors, in [-1, 1], eps-guarded at zero norm."""
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine: shapes {u.shape} and {v.shape} do not match")
    ud, vd = u.data, v.data
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    du = max(nu, eps)
    dv = max(nv, eps)
    raw = float(ud @ vd) / (du * dv)
    c = min(1.0, max(-1.0, raw))

    def vjp(g):
        g = float(g)
        gu = vd / (du * dv)
        gv = ud / (du * dv)
        if nu > eps:
            gu = gu - raw * ud / (du * du)
        if nv > eps:
            gv = gv - raw * vd / (dv * dv)
        return (g * gu).astype(ud.dtype, copy=False), (g * gv).astype(vd.dtype, copy=False)

    return _node(np.asarray(c, dtype=ud.dtype), (u, v), vjp, "cosine")


def layer_norm_rows(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learned scale and shift."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm_rows: shapes {x.shape}, {gamma.shape}, {beta.shape} do not match"
        )
    d = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data[None, :] + beta.data[None, :]
    gd = gamma.data

    def vjp(g):
        dbeta = g.sum(axis=0)
        dgamma = (g * xhat).sum(axis=0)
        gh = g * gd[None, :]
        dx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return dx.astype(x.data.dtype, copy=False), dgamma, dbeta

    return _node(out, (x, gamma, beta), vjp, "layer_norm_rows")


def dropout(x: Tensor, p: float, rng) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise NumericError(f"dropout: p must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= p).astype(x.data.dtype)
    factor = 1.0 / (1.0 - p)

    def vjp(g):
        return (g * keep * factor,)

    return _node(x.data * keep * factor, (x,), vjp, "dropout")


# -- backward pass ------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad buffer.

    ``loss`` must be a scalar. Leaves not reachable from it are untouched,
    so parameters keep whatever (zero-initialized) grad they already have.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node._accum(g)
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# -- deterministic randomness ---------------------------------------------------

_MIX = 0x9E3779B97F4A7C15


class Rng:
    """Seeded random source; identical seeds give identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def child(self, tag: int) -> "Rng":
        """Derive an independent stream; deterministic in (seed, tag)."""
        return Rng((self.seed * _MIX + (int(tag) + 1) * 0x632BE59BD9B4E019) & 0xFFFFFFFFFFFFFFFF)

    def normal(self, shape, std: float = 1.0, dtype=None):
        self.draws += 1
        out = self._gen.standard_normal(size=shape) * std
        return out.astype(dtype or default_dtype())

    def truncated_normal(self, shape, std: float = 0.02, dtype=None):
        """Normal(0, std) resampled until every draw lies within 2 std."""
        self.draws += 1
        out = self._gen.standard_normal(size=shape)
        bad = np.abs(out) > 2.0
        while bad.any():
            out[bad] = self._gen.standard_normal(size=int(bad.sum()))
            bad = np.abs(out) > 2.0
        return (out * std).astype(dtype or default_dtype())

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=None):
        self.draws += 1
        return self._gen.uniform(low, high, size=shape).astype(dtype or default_dtype())

    def integers(self, low: int, high: int, size=None):
        self.draws += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> None:
        self.draws += 1
        self._gen.shuffle(items)
