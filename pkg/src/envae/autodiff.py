"""Dense float64 tensors recorded on a gradient tape.

Minimal reverse-mode engine: each operation appends a node to the tape
shared by its tracked operands, and ``backward`` walks that tape once in
reverse order to produce gradients for every leaf. Tapes are cheap and
rebuilt per training step. Broadcasting follows numpy's trailing-dimension
alignment rules; incompatible shapes raise ``ShapeError``, never silently
truncate.

Everything is float64. Operations that can produce non-finite values from
finite inputs (matmul overflow, exp overflow, log of a non-positive value)
raise ``NonFiniteError`` instead of propagating NaN/Inf.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

# Below this Euclidean norm the beta < 2 norm gradient is defined as zero;
# the true gradient is unbounded there and only a measure-zero event.
NORM_EPS = 1e-12

# Relative disagreement between one-sided difference quotients above which
# finite_diff_check treats a coordinate as sitting on a kink.
_KINK_TOL = 0.05


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ArithmeticError):
    """A forward operation produced NaN or Inf."""


class ContractError(RuntimeError):
    """An autodiff API was used outside its contract."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class _Node:
    """One recorded operation: operand handles plus its vector-Jacobian product."""

    __slots__ = ("inputs", "vjp", "shape")

    def __init__(self, inputs, vjp, shape):
        self.inputs = inputs  # tuple of node ids (None for untracked operands)
        self.vjp = vjp        # None marks a leaf
        self.shape = shape


class Tape:
    """Append-only operation record for one backward pass.

    Node operands always precede the node itself, so a single reverse
    traversal visits every node exactly once. Appends are lock-protected so
    the optional parallel loss path can record from several threads.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._nodes)

    def _push(self, node: _Node) -> int:
        with self._lock:
            self._nodes.append(node)
            return len(self._nodes) - 1

    def leaf(self, data) -> "Tensor":
        """Record an input tensor whose gradient backward will report."""
        arr = _as_array(data)
        idx = self._push(_Node((), None, arr.shape))
        return Tensor(arr, self, idx)


class Tensor:
    """n-dimensional float64 array with an optional handle into a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = _as_array(data)
        self.tape = tape
        self.node = node

    @staticmethod
    def const(data) -> "Tensor":
        """An untracked tensor; safe to share, never receives gradients."""
        return Tensor(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tracked = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.data.shape}{tracked})"

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.const(x)


def _record(inputs: Sequence[Tensor], out: np.ndarray, vjp: Callable) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands were recorded on different tapes")
    if tape is None:
        return Tensor(out)
    ids = tuple(t.node if t.tape is not None else None for t in inputs)
    idx = tape._push(_Node(ids, vjp, out.shape))
    return Tensor(out, tape, idx)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _checked(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


# ---------------------------------------------------------------------------
# broadcasting elementwise ops


def _broadcast_forward(a: Tensor, b: Tensor, fn, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _broadcast_forward(a, b, np.add, "add")
    return _record((a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _broadcast_forward(a, b, np.subtract, "sub")
    return _record((a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _broadcast_forward(a, b, np.multiply, "mul")
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _record((a,), -a.data, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree ({a.shape} @ {b.shape})")
    out = _checked(a.data @ b.data, "matmul")
    return _record((a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = _checked(np.exp(a.data), "exp")
    return _record((a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log requires strictly positive inputs")
    out = np.log(a.data)
    return _record((a,), out, lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _record((a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.maximum(a.data, 0.0)
    return _record((a,), out, lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record((a,), out, lambda g: (g * out * (1.0 - out),))


def abs_(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _record((a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through only where unclipped."""
    a = _wrap(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record((a,), out, lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and structure ops


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    out = np.sum(a.data, axis=axis)
    return _record((a,), out, lambda g: (_expand_reduced(g, a.shape, axis),))


def mean_(a: Tensor, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis)
    return _record((a,), out, lambda g: (_expand_reduced(g, a.shape, axis) / count,))


def pow_norm(v: Tensor, beta: float, axis: int | None = None) -> Tensor:
    """``(sum v_k^2) ** (beta / 2)`` along ``axis`` (all axes when None).

    The gradient is ``beta * ||v||^(beta-2) * v``, defined as zero wherever
    ``||v|| <= NORM_EPS`` so that the beta < 2 singularity at the origin
    stays finite.
    """
    if not (0.0 < beta <= 2.0):
        raise ConfigError(f"beta must lie in (0, 2], got {beta}")
    v = _wrap(v)
    sq = np.sum(v.data * v.data, axis=axis)
    out = _checked(sq ** (beta / 2.0), "pow_norm")

    def vjp(g):
        norm = np.sqrt(sq)
        live = norm > NORM_EPS
        safe = np.where(live, norm, 1.0)
        coef = np.where(live, beta * safe ** (beta - 2.0), 0.0)
        return (_expand_reduced(g * coef, v.shape, axis) * v.data,)

    return _record((v,), out, vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tuple(parts), out, vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    out = a.data.reshape(tuple(shape))
    return _record((a,), out, lambda g: (g.reshape(a.shape),))


def index_axis0(a: Tensor, i: int) -> Tensor:
    a = _wrap(a)
    out = a.data[i]

    def vjp(g):
        z = np.zeros(a.shape)
        z[i] = g
        return (z,)

    return _record((a,), out, vjp)


def pairwise_pow_norm_sum(a: Tensor, beta: float) -> Tensor:
    """sum over unordered pairs i < j of ||a[i] - a[j]||^beta, per batch column.

    Input [M, B, n] yields [B]; norms run over the trailing axis. Squared
    distances come from the Gram expansion so both passes stay O(M^2 B n)
    dense algebra. The gradient of each pair term uses the same
    ``beta ||d||^(beta-2) d`` rule as ``pow_norm``, including its zero
    subgradient below NORM_EPS.
    """
    if not (0.0 < beta <= 2.0):
        raise ConfigError(f"beta must lie in (0, 2], got {beta}")
    a = _wrap(a)
    if a.data.ndim != 3:
        raise ShapeError(f"pairwise_pow_norm_sum expects [M, B, n], got {a.shape}")
    m = a.shape[0]
    if m < 2:
        raise ShapeError("pairwise_pow_norm_sum needs at least two leading slices")
    data = a.data
    sq_norms = np.einsum("mbn,mbn->bm", data, data)
    gram = np.einsum("ibn,jbn->bij", data, data)
    sq = sq_norms[:, :, None] + sq_norms[:, None, :] - 2.0 * gram
    np.maximum(sq, 0.0, out=sq)
    dist = np.sqrt(sq)
    if beta == 2.0:
        powered = sq
    elif beta == 1.0:
        powered = dist
    else:
        powered = dist ** beta
    out = _checked(0.5 * np.sum(powered, axis=(1, 2)), "pairwise_pow_norm_sum")

    def vjp(g):
        live = dist > NORM_EPS
        safe = np.where(live, dist, 1.0)
        if beta == 2.0:
            w = np.where(live, 2.0, 0.0)  # [B, M, M], zero diag
        elif beta == 1.0:
            w = np.where(live, 1.0 / safe, 0.0)
        else:
            w = np.where(live, beta * safe ** (beta - 2.0), 0.0)
        w *= g[:, None, None]
        row = np.einsum("bij->ib", w)
        return (data * row[:, :, None] - np.einsum("bij,jbn->ibn", w, data),)

    return _record((a,), out, vjp)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar root with respect to every leaf on the tape.

    Returns a map from leaf node handle to gradient array; leaves the root
    does not reach get zeros. Pure: running it twice gives equal results.
    """
    if root.tape is not tape or root.node is None:
        raise ContractError("root was not recorded on this tape")
    if root.data.size != 1:
        raise ContractError("backward root must be a scalar")
    nodes = tape._nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[root.node] = np.ones_like(root.data)
    for idx in range(root.node, -1, -1):
        g = grads[idx]
        node = nodes[idx]
        if g is None or node.vjp is None:
            continue
        for inp, contrib in zip(node.inputs, node.vjp(g)):
            if inp is None or contrib is None:
                continue
            grads[inp] = contrib if grads[inp] is None else grads[inp] + contrib
    result = {}
    for idx, node in enumerate(nodes):
        if node.vjp is None:
            g = grads[idx]
            result[idx] = g if g is not None else np.zeros(node.shape)
    return result


@dataclass
class GradCheckReport:
    """Outcome of comparing reverse-mode gradients with central differences."""

    max_rel_error: float
    rel_errors: np.ndarray      # per flat coordinate; NaN where excluded
    excluded: list[int]         # coordinates sitting on a detected kink


def finite_diff_check(f, x, h: float = 1e-6) -> GradCheckReport:
    """Check the tape gradient of scalar ``f`` at ``x`` against central differences.

    Coordinates where the one-sided difference quotients disagree by more
    than a few percent (a kink, e.g. the beta < 2 norm at the origin) are
    reported as excluded rather than failed. Relative error per coordinate
    is ``|analytic - central| / max(1, |analytic|)``.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    x0 = _as_array(x).copy()
    tape = Tape()
    xt = tape.leaf(x0)
    y = f(xt)
    if not isinstance(y, Tensor) or y.data.size != 1:
        raise ContractError("f must return a scalar Tensor")
    analytic = backward(tape, y)[xt.node].ravel()
    f0 = float(y.data)

    flat = x0.ravel()
    rel = np.full(flat.size, np.nan)
    excluded: list[int] = []
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(Tensor.const(x0)).data)
        flat[k] = orig - h
        fm = float(f(Tensor.const(x0)).data)
        flat[k] = orig
        d_plus = (fp - f0) / h
        d_minus = (f0 - fm) / h
        if abs(d_plus - d_minus) > _KINK_TOL * (abs(d_plus) + abs(d_minus) + 1.0):
            excluded.append(k)
            continue
        central = (fp - fm) / (2.0 * h)
        rel[k] = abs(analytic[k] - central) / max(1.0, abs(analytic[k]))
    included = rel[~np.isnan(rel)]
    max_err = float(included.max()) if included.size else 0.0
    return GradCheckReport(max_rel_error=max_err, rel_errors=rel, excluded=excluded)
