"""Dense float64 tensors with reverse-mode automatic differentiation.

A small eager autodiff engine: operations execute immediately on numpy
arrays and, while a :class:`Tape` is active, append a node holding their
backward rule. The node list is topologically ordered by construction, so
:func:`backward` is a single reverse sweep. Without an active tape every
operation is a plain numpy computation, which is the fast path used for
inference.

All arithmetic is float64. Gradients accumulate into ``Tensor.grad`` and
must be zeroed explicitly between optimizer steps (see :func:`zero_grads`).
"""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "ContractError",
    "backward",
    "zero_grads",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softplus",
    "power",
    "clip",
    "concat_cols",
    "softmax_row",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "getitem",
    "embed_lookup",
    "gather_time",
    "cumprod",
    "cross_entropy_rows",
    "REGISTERED_OPS",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the mathematical domain of the operation."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


# Names of every differentiable op registered below; the test suite checks
# each one against central finite differences.
REGISTERED_OPS: set[str] = set()

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

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
        return float(self.data)

    def assert_finite(self) -> "Tensor":
        """Raise DomainError if any stored value is NaN or infinite."""
        if not np.all(np.isfinite(self.data)):
            raise DomainError(f"non-finite values in tensor {self.name or ''}".strip())
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; every method delegates to a registered op
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, other):
        return power(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


class Tape:
    """Ordered record of operations for one reverse sweep.

    Nodes are appended in execution order, which is topological by
    construction under eager evaluation: every node's operands were created
    before the node itself. ``backward`` therefore visits each node exactly
    once, in reverse.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _register(name: str):
    REGISTERED_OPS.add(name)

    def deco(fn):
        fn.op_name = name
        return fn

    return deco


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Put an op node on the active tape if any parent participates in grad."""
    tape = _ACTIVE_TAPE
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, parents, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be scalar. Each call adds exactly dLoss/dTensor into the
    ``grad`` fields, so repeated calls without zeroing accumulate. The sweep
    itself uses per-call buffers, keeping earlier calls from contaminating
    the propagation.
    """
    tape = tape if tape is not None else _ACTIVE_TAPE
    if tape is None:
        raise ContractError("backward requires a tape")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    sweep: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, parents, backward_fn in reversed(tape.nodes):
        g = sweep.get(id(out))
        if g is None:
            continue
        for parent, pg in zip(parents, backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            pid = id(parent)
            if pid in sweep:
                sweep[pid] = sweep[pid] + pg
            else:
                sweep[pid] = pg
                holders[pid] = parent
    for tid, g in sweep.items():
        t = holders[tid]
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


@_register("add")
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


@_register("sub")
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


@_register("mul")
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


@_register("div")
def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


@_register("neg")
def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


@_register("matmul")
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # branch-free stable logistic: exp argument is always nonpositive
    e = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + e)
    return np.where(x >= 0, pos, 1.0 - pos)


@_register("sigmoid")
def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid_values(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


@_register("tanh")
def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


@_register("exp")
def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,))


@_register("log")
def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive operands")
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


@_register("softplus")
def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data))
    s = _sigmoid_values(a.data)
    return _record(out, (a,), lambda g: (g * s,))


@_register("power")
def power(a, b) -> Tensor:
    """Elementwise a**b.

    Scalar integer exponents accept any base; fractional or tensor-valued
    exponents require strictly positive bases (the backward rule needs
    log(base)).
    """
    a = as_tensor(a)
    if isinstance(b, numbers.Real) and float(b).is_integer():
        e = float(b)
        out = Tensor(a.data**e)

        def bwd_int(g):
            return (g * e * a.data ** (e - 1.0),)

        return _record(out, (a,), bwd_int)

    b = as_tensor(b)
    if np.any(a.data <= 0):
        raise DomainError("power with non-integer exponent requires positive base")
    y = a.data**b.data
    out = Tensor(y)

    def bwd(g):
        ga = _unbroadcast(g * b.data * a.data ** (b.data - 1.0), a.shape)
        gb = _unbroadcast(g * y * np.log(a.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


@_register("clip")
def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is passed through strictly inside the
    interval and zeroed on the clamped entries."""
    a = as_tensor(a)
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# shape manipulation


@_register("concat_cols")
def concat_cols(a, b) -> Tensor:
    """Concatenate along the last axis; leading axes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_cols leading shapes disagree: {a.shape} vs {b.shape}")
    na = a.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))

    def bwd(g):
        return g[..., :na], g[..., na:]

    return _record(out, (a, b), bwd)


@_register("reshape")
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


@_register("getitem")
def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[key])

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and row ops


@_register("reduce_sum")
def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd)


@_register("reduce_mean")
def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / n,)

    return _record(out, (a,), bwd)


@_register("softmax_row")
def softmax_row(a) -> Tensor:
    """Softmax along the last axis, stabilized by the row max."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bwd)


@_register("cumprod")
def cumprod(a) -> Tensor:
    """Cumulative product along the last axis.

    The backward rule divides by the inputs, so entries must be nonzero;
    this op exists for stick variables, which live in (0, 1].
    """
    a = as_tensor(a)
    y = np.cumprod(a.data, axis=-1)
    out = Tensor(y)

    def bwd(g):
        rev = np.flip(np.cumsum(np.flip(g * y, axis=-1), axis=-1), axis=-1)
        return (rev / a.data,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# lookup / gather ops


@_register("embed_lookup")
def embed_lookup(table, ids) -> Tensor:
    """Row lookup: table [V, E] indexed by an integer id array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError("embedding id out of range")
    out = Tensor(table.data[ids])

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _record(out, (table,), bwd)


@_register("gather_time")
def gather_time(a, idx) -> Tensor:
    """Select one timestep per batch row: a [B, T, K], idx [B] -> [B, K]."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _record(out, (a,), bwd)


@_register("cross_entropy_rows")
def cross_entropy_rows(logits, targets, weights=None) -> Tensor:
    """Summed token cross-entropy over rows of logits.

    logits [N, V], targets int [N], optional per-row weights [N] (use 0.0 to
    mask padding rows). Returns a scalar: sum_i w_i * (-log softmax(l_i)[t_i]).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    n, v = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise DomainError("target index out of vocabulary")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(n)
    nll = (lse - z[rows, targets]) * w
    out = Tensor(nll.sum())

    def bwd(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        return (g * p * w[:, None],)

    return _record(out, (logits,), bwd)
