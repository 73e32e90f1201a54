"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are numpy arrays of rank 0..3 (rank 0 is the scalar case used by
losses). Gradients come from recording every op on a :class:`Tape` during
the forward pass and replaying the recorded nodes in reverse: define-by-run,
so the tape is rebuilt on every forward pass and append order is already a
topological order. The op set is deliberately small -- matrix products,
elementwise nonlinearities, reductions, concatenation/slicing, a stable row
softmax, and row L2 normalization -- and everything downstream is composed
from it. Adam with bias correction lives here too, since every other module
optimizes through this engine.

Non-finite values raise ``FloatingPointError`` at op boundaries while checks
are enabled (the default; ``python -O`` or :func:`set_finite_checks` turns
them off for release-style runs).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "AdamState", "adam_step",
    "matmul", "transpose", "add", "sub", "mul", "neg",
    "add_scalar", "mul_scalar", "div_scalar",
    "tanh", "sigmoid", "relu", "exp", "log",
    "sum", "mean_rows", "mean_cols",
    "concat", "stack_rows", "narrow", "row", "index",
    "softmax_rows", "l2_normalize_rows",
    "diag_part", "add_rowvec", "sub_colvec", "rowmax",
    "set_finite_checks", "finite_checks_enabled",
]

_CHECK_FINITE = __debug__


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection at op boundaries."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def finite_checks_enabled() -> bool:
    return _CHECK_FINITE


class Tensor:
    """Dense float64 array, rank 0..3, optionally tracked on the active tape.

    Values are treated as immutable once created; the one sanctioned
    exception is the optimizer updating parameter ``.data`` in place
    between tapes.
    """

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ValueError(f"rank-{arr.ndim} tensor not supported (max rank 3)")
        if _CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self._tape = None
        self._node = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def copy_data(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # operator sugar; numbers go through the scalar ops so they do not
    # become tape leaves
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an op; divide by a scalar")
        return div_scalar(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("input_ids", "vjp", "leaf")

    def __init__(self, input_ids, vjp, leaf):
        self.input_ids = input_ids
        self.vjp = vjp
        self.leaf = leaf


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Records ops during one forward pass; single writer, no nesting.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the resulting scalar loss.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def parent_ids(self, i: int) -> tuple[int, ...]:
        return self._nodes[i].input_ids

    def _ensure(self, t: Tensor) -> int:
        # lazily register tensors from outside this tape as leaves
        if t._tape is self:
            return t._node
        self._nodes.append(_Node((), None, t))
        t._tape = self
        t._node = len(self._nodes) - 1
        return t._node

    def _record(self, out: Tensor, inputs, vjp) -> None:
        ids = tuple(self._ensure(t) for t in inputs)
        self._nodes.append(_Node(ids, vjp, None))
        out._tape = self
        out._node = len(self._nodes) - 1

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradient of a scalar loss for every reachable leaf tensor.

        Returns a map keyed by leaf Tensor identity; each gradient has the
        same shape as the leaf's value.
        """
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.ndim != 0:
            raise ValueError("loss must be a scalar (rank-0) tensor")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss._node] = np.asarray(1.0)
        for i in range(loss._node, -1, -1):
            g = grads[i]
            node = self._nodes[i]
            if g is None or node.vjp is None:
                continue
            for j, gj in zip(node.input_ids, node.vjp(g)):
                if gj is None:
                    continue
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
        out: dict[Tensor, np.ndarray] = {}
        for node, g in zip(self._nodes, grads):
            if node.leaf is not None and g is not None:
                out[node.leaf] = np.asarray(g, dtype=np.float64)
        return out


def _make(out_data: np.ndarray, inputs, vjp, op: str) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out._tape = None
    out._node = -1
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._record(out, inputs, vjp)
    return out


def _check(t, name: str, op: str) -> None:
    if not isinstance(t, Tensor):
        raise TypeError(f"{op}: {name} must be a Tensor, got {type(t).__name__}")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's rank rules for rank-1 operands."""
    _check(a, "a", "matmul"); _check(b, "b", "matmul")
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise ValueError(f"matmul needs rank 1-2 operands, got {ad.ndim} and {bd.ndim}")
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    if ad.ndim == 2 and bd.ndim == 2:
        def vjp(g):
            return g @ bd.T, ad.T @ g
    elif ad.ndim == 1 and bd.ndim == 2:
        def vjp(g):
            return bd @ g, np.outer(ad, g)
    elif ad.ndim == 2 and bd.ndim == 1:
        def vjp(g):
            return np.outer(g, bd), ad.T @ g
    else:  # dot product
        def vjp(g):
            return g * bd, g * ad
    return _make(out, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    _check(a, "a", "transpose")
    if a.data.ndim != 2:
        raise ValueError(f"transpose needs a rank-2 tensor, got rank {a.data.ndim}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def _binary_shapes(ad, bd, op):
    # equal shapes, or one side rank-0 broadcasting over the other
    if ad.shape != bd.shape and ad.ndim != 0 and bd.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {ad.shape} vs {bd.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a, "a", "add"); _check(b, "b", "add")
    ad, bd = a.data, b.data
    _binary_shapes(ad, bd, "add")

    def vjp(g):
        ga = np.asarray(g.sum()) if ad.ndim == 0 and g.ndim != 0 else g
        gb = np.asarray(g.sum()) if bd.ndim == 0 and g.ndim != 0 else g
        return ga, gb
    return _make(ad + bd, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a, "a", "sub"); _check(b, "b", "sub")
    ad, bd = a.data, b.data
    _binary_shapes(ad, bd, "sub")

    def vjp(g):
        ga = np.asarray(g.sum()) if ad.ndim == 0 and g.ndim != 0 else g
        gb = np.asarray((-g).sum()) if bd.ndim == 0 and g.ndim != 0 else -g
        return ga, gb
    return _make(ad - bd, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either side may be rank-0 (scaling)."""
    _check(a, "a", "mul"); _check(b, "b", "mul")
    ad, bd = a.data, b.data
    _binary_shapes(ad, bd, "mul")

    def vjp(g):
        ga = g * bd
        gb = g * ad
        if ad.ndim == 0 and ga.ndim != 0:
            ga = np.asarray(ga.sum())
        if bd.ndim == 0 and gb.ndim != 0:
            gb = np.asarray(gb.sum())
        return ga, gb
    return _make(ad * bd, (a, b), vjp, "mul")


def neg(a: Tensor) -> Tensor:
    _check(a, "a", "neg")
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def add_scalar(a: Tensor, c: float) -> Tensor:
    _check(a, "a", "add_scalar")
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    _check(a, "a", "mul_scalar")
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def div_scalar(a: Tensor, c: float) -> Tensor:
    _check(a, "a", "div_scalar")
    c = float(c)
    if c == 0.0:
        raise ZeroDivisionError("div_scalar by zero")
    return _make(a.data / c, (a,), lambda g: (g / c,), "div_scalar")


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a: Tensor) -> Tensor:
    _check(a, "a", "tanh")
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    _check(a, "a", "sigmoid")
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    _check(a, "a", "relu")
    x = a.data
    return _make(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0.0),), "relu")


def exp(a: Tensor) -> Tensor:
    _check(a, "a", "exp")
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    _check(a, "a", "log")
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _make(y, (a,), lambda g: (g / x,), "log")


# ---------------------------------------------------------------------------
# reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name used throughout
    """Sum of all elements, as a rank-0 tensor."""
    _check(a, "a", "sum")
    shape = a.data.shape
    return _make(np.asarray(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape),), "sum")


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the row index of a matrix: (m, n) -> (n,)."""
    _check(a, "a", "mean_rows")
    if a.data.ndim != 2:
        raise ValueError(f"mean_rows needs a rank-2 tensor, got rank {a.data.ndim}")
    m, n = a.data.shape
    return _make(a.data.mean(axis=0), (a,),
                 lambda g: (np.broadcast_to(g / m, (m, n)),), "mean_rows")


def mean_cols(a: Tensor) -> Tensor:
    """Mean over the column index of a matrix: (m, n) -> (m,)."""
    _check(a, "a", "mean_cols")
    if a.data.ndim != 2:
        raise ValueError(f"mean_cols needs a rank-2 tensor, got rank {a.data.ndim}")
    m, n = a.data.shape
    return _make(a.data.mean(axis=1), (a,),
                 lambda g: (np.broadcast_to((g / n)[:, None], (m, n)),), "mean_cols")


# ---------------------------------------------------------------------------
# shape plumbing

def concat(parts) -> Tensor:
    """Concatenate rank-1 or rank-2 tensors along the last axis."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat of an empty sequence")
    for i, t in enumerate(parts):
        _check(t, f"parts[{i}]", "concat")
    nd = parts[0].data.ndim
    if nd not in (1, 2) or any(t.data.ndim != nd for t in parts):
        raise ValueError("concat needs tensors of equal rank 1 or 2")
    if nd == 2:
        lead = parts[0].data.shape[0]
        if any(t.data.shape[0] != lead for t in parts):
            raise ValueError("concat: leading dims differ")
    out = np.concatenate([t.data for t in parts], axis=-1)
    offsets = np.cumsum([t.data.shape[-1] for t in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=-1))
    return _make(out, tuple(parts), vjp, "concat")


def stack_rows(parts) -> Tensor:
    """Stack rank-1 tensors of equal width into a matrix, one per row."""
    parts = list(parts)
    if not parts:
        raise ValueError("stack_rows of an empty sequence")
    for i, t in enumerate(parts):
        _check(t, f"parts[{i}]", "stack_rows")
        if t.data.ndim != 1:
            raise ValueError("stack_rows needs rank-1 tensors")
    width = parts[0].data.shape[0]
    if any(t.data.shape[0] != width for t in parts):
        raise ValueError("stack_rows: widths differ")
    out = np.stack([t.data for t in parts], axis=0)

    def vjp(g):
        return tuple(g[i] for i in range(len(parts)))
    return _make(out, tuple(parts), vjp, "stack_rows")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of length ``length`` starting at ``start`` along ``axis``."""
    _check(a, "a", "narrow")
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"narrow: axis {axis} out of range for rank {nd}")
    axis %= nd
    dim = a.data.shape[axis]
    if length < 1 or start < 0 or start + length > dim:
        raise ValueError(f"narrow: [{start}, {start + length}) outside dim {dim}")
    sl = tuple(slice(start, start + length) if i == axis else slice(None)
               for i in range(nd))
    shape = a.data.shape

    def vjp(g):
        z = np.zeros(shape)
        z[sl] = g
        return (z,)
    return _make(a.data[sl].copy(), (a,), vjp, "narrow")


def row(a: Tensor, i: int) -> Tensor:
    """Row ``i`` of a matrix as a rank-1 tensor (embedding lookup)."""
    _check(a, "a", "row")
    if a.data.ndim != 2:
        raise ValueError(f"row needs a rank-2 tensor, got rank {a.data.ndim}")
    m = a.data.shape[0]
    if not 0 <= i < m:
        raise ValueError(f"row index {i} out of range for {m} rows")
    shape = a.data.shape

    def vjp(g):
        z = np.zeros(shape)
        z[i] = g
        return (z,)
    return _make(a.data[i].copy(), (a,), vjp, "row")


def index(a: Tensor, i: int) -> Tensor:
    """Element ``i`` of a vector as a rank-0 tensor."""
    _check(a, "a", "index")
    if a.data.ndim != 1:
        raise ValueError(f"index needs a rank-1 tensor, got rank {a.data.ndim}")
    n = a.data.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"index {i} out of range for length {n}")

    def vjp(g):
        z = np.zeros(n)
        z[i] = g
        return (z,)
    return _make(np.asarray(a.data[i]), (a,), vjp, "index")


# ---------------------------------------------------------------------------
# normalizers

def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis of a vector or matrix, max-shifted for stability."""
    _check(a, "a", "softmax_rows")
    x = a.data
    if x.ndim not in (1, 2):
        raise ValueError(f"softmax_rows needs rank 1 or 2, got rank {x.ndim}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)
    return _make(y, (a,), vjp, "softmax_rows")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row (or a single vector) to unit L2 norm; zero rows pass through."""
    _check(a, "a", "l2_normalize_rows")
    x = a.data
    if x.ndim not in (1, 2):
        raise ValueError(f"l2_normalize_rows needs rank 1 or 2, got rank {x.ndim}")
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    safe = np.where(norms == 0.0, 1.0, norms)
    y = x / safe

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / safe,)
    return _make(y, (a,), vjp, "l2_normalize_rows")


# ---------------------------------------------------------------------------
# batch helpers for the ranking losses

def diag_part(a: Tensor) -> Tensor:
    """Diagonal of a square matrix as a rank-1 tensor."""
    _check(a, "a", "diag_part")
    x = a.data
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"diag_part needs a square matrix, got {x.shape}")
    n = x.shape[0]

    def vjp(g):
        z = np.zeros((n, n))
        np.fill_diagonal(z, g)
        return (z,)
    return _make(np.diag(x).copy(), (a,), vjp, "diag_part")


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a width-n vector to every row of an (m, n) matrix."""
    _check(x, "x", "add_rowvec"); _check(v, "v", "add_rowvec")
    xd, vd = x.data, v.data
    if xd.ndim != 2 or vd.ndim != 1 or xd.shape[1] != vd.shape[0]:
        raise ValueError(f"add_rowvec: {xd.shape} + row {vd.shape}")

    def vjp(g):
        return g, g.sum(axis=0)
    return _make(xd + vd, (x, v), vjp, "add_rowvec")


def sub_colvec(x: Tensor, v: Tensor) -> Tensor:
    """Subtract v[i] from every element of row i of an (m, n) matrix."""
    _check(x, "x", "sub_colvec"); _check(v, "v", "sub_colvec")
    xd, vd = x.data, v.data
    if xd.ndim != 2 or vd.ndim != 1 or xd.shape[0] != vd.shape[0]:
        raise ValueError(f"sub_colvec: {xd.shape} - col {vd.shape}")

    def vjp(g):
        return g, -g.sum(axis=1)
    return _make(xd - vd[:, None], (x, v), vjp, "sub_colvec")


def rowmax(a: Tensor) -> Tensor:
    """Maximum of each row; gradient routes to the first argmax per row."""
    _check(a, "a", "rowmax")
    x = a.data
    if x.ndim != 2:
        raise ValueError(f"rowmax needs a rank-2 tensor, got rank {x.ndim}")
    idx = x.argmax(axis=1)
    m, n = x.shape

    def vjp(g):
        z = np.zeros((m, n))
        z[np.arange(m), idx] = g
        return (z,)
    return _make(x.max(axis=1), (a,), vjp, "rowmax")


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """Adam moment buffers, keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, Tensor], grads: dict[Tensor, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; mutates param data in place.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    if lr < 0.0:
        raise ValueError(f"negative learning rate {lr}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter '{name}' "
                             f"shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
