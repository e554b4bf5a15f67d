"""Dense double-precision tensors with reverse-mode automatic differentiation.

Ops executed while a Tape is active are recorded in execution order, which is
already a valid topological order, so the backward pass is one reversed sweep
over the records. With no active tape an op is a plain numpy computation;
that is what inference mode uses.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor-layer failures."""


class DimensionError(TensorError):
    """Operand shapes are incompatible with the requested op."""


class DomainError(TensorError):
    """Input values lie outside the op's mathematical domain."""


class ContractError(TensorError):
    """A caller violated an API precondition."""


class Tensor:
    """A dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class _Node:
    """One recorded op: its output, parents, and the local chain-rule step."""

    __slots__ = ("op", "out", "parents", "pullback")

    def __init__(self, op: str, out: Tensor, parents: tuple[Tensor, ...], pullback):
        self.op = op
        self.out = out
        self.parents = parents
        self.pullback = pullback


_ACTIVE = threading.local()

# Test hook: op name -> multiplicative factor applied to that op's parent
# gradients during backward, so negative-control tests can verify a broken
# backward rule is actually caught.
_grad_corruption: dict[str, float] = {}


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of ops; every node's parents precede it."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        if popped is not self:
            raise ContractError("tapes must be exited in LIFO order")
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> tuple[_Node, ...]:
        return tuple(self._nodes)


def _record(op: str, out_data: np.ndarray, parents: tuple[Tensor, ...], pullback) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out._tape = tape
        tape._nodes.append(_Node(op, out, parents, pullback))
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss.

    Leaf gradients accumulate additively into ``.grad``; a detached or
    constant loss is a no-op, so existing gradients are left untouched.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        return
    # Gradients of intermediates live in a local map so repeated backward
    # calls on one tape cannot double-count stale buffers; only leaves get
    # their .grad populated.
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape._nodes):
        g = flowing.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.pullback(g)
        factor = _grad_corruption.get(node.op)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if factor is not None:
                pg = pg * factor
            if parent._tape is not None:
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg
            elif parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + pg


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data

    def pull(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", ad @ bd, (a, b), pull)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise product; the only implicit broadcast is scalar * tensor."""
    ad, bd = a.data, b.data
    if a.shape == b.shape:
        pull = lambda g: (g * bd, g * ad)
    elif a.shape == ():
        pull = lambda g: (np.sum(g * bd), g * ad)
    elif b.shape == ():
        pull = lambda g: (g * bd, np.sum(g * ad))
    else:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _record("mul", ad * bd, (a, b), pull)


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", t.data * c, (t,), lambda g: (g * c,))


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _record("tanh", y, (t,), lambda g: (g * (1.0 - y * y),))


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.data)
    return _record("exp", y, (t,), lambda g: (g * y,))


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise DomainError("log: input has non-positive entries")
    td = t.data
    return _record("log", np.log(td), (t,), lambda g: (g / td,))


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape
    return _record("sum_all", np.sum(t.data), (t,), lambda g: (np.full(shape, g),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot: shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    return _record("dot", np.dot(ad, bd), (a, b), lambda g: (g * bd, g * ad))


def softmax(v: Tensor) -> Tensor:
    """Stable softmax over a vector: exponents are shifted by the max entry."""
    if v.data.ndim != 1 or v.shape[0] == 0:
        raise DomainError(f"softmax needs a non-empty vector, got shape {v.shape}")
    shifted = v.data - np.max(v.data)
    e = np.exp(shifted)
    y = e / np.sum(e)

    def pull(g):
        return (y * (g - np.dot(g, y)),)

    return _record("softmax", y, (v,), pull)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise stable softmax over a matrix."""
    if m.data.ndim != 2 or m.shape[1] == 0:
        raise DomainError(f"softmax_rows needs a matrix with columns, got shape {m.shape}")
    shifted = m.data - np.max(m.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=1, keepdims=True)

    def pull(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _record("softmax_rows", y, (m,), pull)


def logsumexp(v: Tensor) -> Tensor:
    """Stable log(sum(exp(v))) of a non-empty vector; gradient is softmax(v)."""
    if v.data.ndim != 1 or v.shape[0] == 0:
        raise DomainError(f"logsumexp needs a non-empty vector, got shape {v.shape}")
    c = np.max(v.data)
    e = np.exp(v.data - c)
    s = np.sum(e)

    def pull(g):
        return (g * (e / s),)

    return _record("logsumexp", np.log(s) + c, (v,), pull)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two non-zero vectors, clipped into [-1, 1]."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine: shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    na = float(np.linalg.norm(ad))
    nb = float(np.linalg.norm(bd))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine: zero-norm input (degenerate embedding)")
    c = float(np.dot(ad, bd) / (na * nb))

    def pull(g):
        ga = g * (bd / (na * nb) - c * ad / (na * na))
        gb = g * (ad / (na * nb) - c * bd / (nb * nb))
        return ga, gb

    return _record("cosine", np.float64(min(1.0, max(-1.0, c))), (a, b), pull)


def take(v: Tensor, indices: Sequence[int]) -> Tensor:
    if v.data.ndim != 1:
        raise DimensionError(f"take needs a vector, got shape {v.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= v.shape[0]):
        raise DimensionError(f"take: index out of range for length {v.shape[0]}")
    n = v.shape[0]

    def pull(g):
        z = np.zeros(n, dtype=np.float64)
        np.add.at(z, idx, g)
        return (z,)

    return _record("take", v.data[idx], (v,), pull)


def take_rows(m: Tensor, indices: Sequence[int]) -> Tensor:
    if m.data.ndim != 2:
        raise DimensionError(f"take_rows needs a matrix, got shape {m.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise DimensionError(f"take_rows: row index out of range for {m.shape[0]} rows")
    shape = m.shape

    def pull(g):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, idx, g)
        return (z,)

    return _record("take_rows", m.data[idx], (m,), pull)


def scatter_rows(src: Tensor, indices: Sequence[int], n_rows: int) -> Tensor:
    """Sum rows of src into an [n_rows x d] zero matrix at the given rows."""
    if src.data.ndim != 2:
        raise DimensionError(f"scatter_rows needs a matrix, got shape {src.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != src.shape[0]:
        raise DimensionError("scatter_rows: one index per source row required")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise DimensionError(f"scatter_rows: target index out of range for {n_rows} rows")
    out = np.zeros((n_rows, src.shape[1]), dtype=np.float64)
    np.add.at(out, idx, src.data)
    return _record("scatter_rows", out, (src,), lambda g: (g[idx],))


def add_rows(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rows: shapes {m.shape} and {v.shape} do not agree")
    return _record("add_rows", m.data + v.data, (m, v), lambda g: (g, g.sum(axis=0)))


def scale_rows(m: Tensor, weights) -> Tensor:
    """Multiply each row by a fixed (non-learnable) scalar weight."""
    w = np.asarray(weights, dtype=np.float64)
    if m.data.ndim != 2 or w.ndim != 1 or w.shape[0] != m.shape[0]:
        raise DimensionError(f"scale_rows: {m.shape} rows vs {w.shape} weights")
    col = w[:, None]
    return _record("scale_rows", m.data * col, (m,), lambda g: (g * col,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise DimensionError("concat_cols: all parts must be matrices with equal row count")
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def pull(g):
        return tuple(np.hsplit(g, splits))

    return _record("concat_cols", np.hstack([p.data for p in parts]), tuple(parts), pull)


def stack_scalars(items: Sequence[Tensor]) -> Tensor:
    if not items:
        raise ContractError("stack_scalars needs at least one scalar")
    for t in items:
        if t.data.shape != ():
            raise DimensionError(f"stack_scalars: got shape {t.data.shape}, expected scalar")

    def pull(g):
        return tuple(np.asarray(g[i]) for i in range(len(items)))

    out = np.array([t.data for t in items], dtype=np.float64)
    return _record("stack_scalars", out, tuple(items), pull)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(t.data.shape, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise DimensionError(f"reshape: cannot view {t.shape} as {shape}")
    old = t.data.shape
    return _record("reshape", t.data.reshape(shape), (t,), lambda g: (g.reshape(old),))


def transpose(m: Tensor) -> Tensor:
    if m.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {m.shape}")
    return _record("transpose", m.data.T.copy(), (m,), lambda g: (g.T,))


def normalize_rows(m: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm."""
    if m.data.ndim != 2:
        raise DimensionError(f"normalize_rows needs a matrix, got shape {m.shape}")
    norms = np.linalg.norm(m.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("normalize_rows: zero-norm row (degenerate embedding)")
    y = m.data / norms

    def pull(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _record("normalize_rows", y, (m,), pull)


def layer_norm_rows(m: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and unit variance (no learned gain)."""
    if m.data.ndim != 2 or m.shape[1] == 0:
        raise DimensionError(f"layer_norm_rows needs a matrix with columns, got shape {m.shape}")
    mu = np.mean(m.data, axis=1, keepdims=True)
    var = np.mean((m.data - mu) ** 2, axis=1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (m.data - mu) / s

    def pull(g):
        gm = np.mean(g, axis=1, keepdims=True)
        gy = np.mean(g * y, axis=1, keepdims=True)
        return ((g - gm - y * gy) / s,)

    return _record("layer_norm_rows", y, (m,), pull)


def dropout(m: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: surviving entries are rescaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    mask = (rng.random(m.data.shape) >= p) / (1.0 - p)
    return _record("dropout", m.data * mask, (m,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradcheckFailure:
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    checked: int
    failures: list[GradcheckFailure] = field(default_factory=list)


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradcheckReport:
    """Compare the reverse-mode gradient of f at x with central differences.

    Every coordinate is perturbed by +/-h; the relative error uses
    max(|analytic|, |numeric|, 1e-8) as denominator. f must be deterministic.
    """
    saved_flag, saved_grad = x.requires_grad, x.grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape():
            loss = f(x)
            backward(loss)
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    finally:
        x.requires_grad = saved_flag
        x.grad = saved_grad

    failures: list[GradcheckFailure] = []
    max_rel = 0.0
    for idx in np.ndindex(x.data.shape):
        orig = x.data[idx]
        x.data[idx] = orig + h
        fp = f(x).item()
        x.data[idx] = orig - h
        fm = f(x).item()
        x.data[idx] = orig
        numeric = (fp - fm) / (2.0 * h)
        ana = float(analytic[idx])
        denom = max(abs(ana), abs(numeric), 1e-8)
        rel = abs(ana - numeric) / denom
        max_rel = max(max_rel, rel)
        if rel >= tol:
            failures.append(GradcheckFailure(idx, ana, numeric, rel))
    return GradcheckReport(
        passed=not failures,
        max_rel_error=max_rel,
        checked=int(np.prod(x.data.shape, dtype=np.int64)) if x.data.shape else 1,
        failures=failures,
    )
