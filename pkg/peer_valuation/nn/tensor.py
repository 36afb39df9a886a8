"""Dense float64 tensors with a recorded tape for reverse-mode gradients.

Only the operations the two graph models need are provided. Every op
computes its output eagerly with numpy and, when a ``Tape`` is active,
records a closure mapping the output gradient to input gradients.

Typical use::

    with Tape() as tape:
        loss = mse_loss(forward(params), target)
    backward(tape, loss)

Gradients accumulate into ``Tensor.grad`` of leaf tensors created with
``requires_grad=True``. Calling ``backward`` twice without resetting the
leaves (see ``zero_grad``) adds the second gradient to the first.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from peer_valuation.errors import (
    InvalidInputError,
    InvalidShapeError,
    NonFiniteError,
)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_state = threading.local()


class Tensor:
    """A row-major float64 array that can take part in a recorded tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = None
        self._leaf = True

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out.name = ""
        out.node_id = None
        out._leaf = False
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


@dataclass
class _Record:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: BackwardFn


class Tape:
    """Ordered record of the operations of one forward pass.

    A tape is single-owner; entering it makes it the active tape of the
    current thread only.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(
        self,
        op: str,
        out: Tensor,
        inputs: tuple[Tensor, ...],
        backward_fn: BackwardFn,
    ):
        for t in inputs:
            if t.requires_grad and not t.is_leaf and not self.owns(t):
                raise RuntimeError(
                    f"Input of {op} was produced outside this tape"
                )
        out.node_id = len(self.records)
        self.records.append(_Record(op, out, inputs, backward_fn))

    def owns(self, t: Tensor) -> bool:
        """Whether ``t`` is the output of an operation on this tape."""
        i = t.node_id
        return i is not None and i < len(self.records) and (
            self.records[i].out is t
        )

    def __len__(self) -> int:
        return len(self.records)


def _stack() -> list[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _emit(
    op: str,
    data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward_fn: BackwardFn,
) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, requires_grad)
    tape = active_tape()
    if tape is not None and requires_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_ids(ids, upper: int, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if len(ids) and (ids.min() < 0 or ids.max() >= upper):
        raise InvalidInputError(
            f"{what} ids must lie in [0, {upper}). "
            f"Got range [{ids.min()}, {ids.max()}]"
        )
    return ids


def _rows(data: np.ndarray, n: int) -> np.ndarray:
    """View of ``data`` as ``n`` flat rows; works for zero rows too."""
    return data.reshape(n, int(np.prod(data.shape[1:], dtype=np.int64)))


def _incidence(ids: np.ndarray, n: int) -> sparse.csr_matrix:
    """(n, E) 0/1 matrix with a one at (ids[e], e)."""
    n_items = len(ids)
    return sparse.csr_matrix(
        (np.ones(n_items), (ids, np.arange(n_items))), shape=(n, n_items)
    )


# -- elementwise and structural ops -------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an (m, k) and a (k, n) tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidShapeError(
            f"Cannot multiply shapes {a.shape} and {b.shape}"
        )

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", a.data @ b.data, (a, b), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may also be a bias row broadcast over ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:

        def _backward(g):
            return g, g

    elif a.data.ndim == 2 and b.shape in ((a.shape[1],), (1, a.shape[1])):
        b_shape = b.shape

        def _backward(g):
            return g, g.sum(axis=0).reshape(b_shape)

    else:
        raise InvalidShapeError(f"Cannot add shapes {a.shape} and {b.shape}")
    return _emit("add", a.data + b.data, (a, b), _backward)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    x = _as_tensor(x)
    mask = x.data > 0

    def _backward(g):
        return (g * mask,)

    return _emit("relu", np.where(mask, x.data, 0.0), (x,), _backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every entry by a constant."""
    x = _as_tensor(x)
    c = float(c)

    def _backward(g):
        return (g * c,)

    return _emit("scale", x.data * c, (x,), _backward)


def concat_rows(*parts: Tensor) -> Tensor:
    """Join the rows of (n, a), (n, b), ... tensors into (n, a + b + ...)."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise InvalidShapeError("Nothing to concatenate")
    n = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != n:
            raise InvalidShapeError(
                f"Cannot concatenate shapes {[q.shape for q in parts]}"
            )
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def _backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    data = np.concatenate([p.data for p in parts], axis=1)
    return _emit("concat_rows", data, parts, _backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    old_shape = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as err:
        raise InvalidShapeError(str(err)) from err

    def _backward(g):
        return (g.reshape(old_shape),)

    return _emit("reshape", data, (x,), _backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    x = _as_tensor(x)

    def _backward(g):
        return (np.full(x.shape, float(g)),)

    return _emit("sum_all", np.array(x.data.sum()), (x,), _backward)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise dot products of two (E, d) tensors, giving (E,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise InvalidShapeError(
            f"row_dot needs equal 2-D shapes. Got {a.shape} and {b.shape}"
        )

    def _backward(g):
        return g[:, None] * b.data, g[:, None] * a.data

    data = np.einsum("ed,ed->e", a.data, b.data)
    return _emit("row_dot", data, (a, b), _backward)


def mul_rows(x: Tensor, w: Tensor) -> Tensor:
    """Scale row e of an (E, d) tensor by w[e]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.shape != (x.shape[0],):
        raise InvalidShapeError(
            f"mul_rows needs (E, d) and (E,). Got {x.shape} and {w.shape}"
        )

    def _backward(g):
        return g * w.data[:, None], np.einsum("ed,ed->e", g, x.data)

    return _emit("mul_rows", x.data * w.data[:, None], (x, w), _backward)


# -- indexed ops ---------------------------------------------------------


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: row i of the output is ``table[ids[i]]``.

    The backward pass scatter-adds, so repeated ids accumulate.
    """
    table = _as_tensor(table)
    ids = _check_ids(ids, table.shape[0], "Row")
    n_rows = table.shape[0]

    def _backward(g):
        flat = _rows(g, len(ids))
        grad = _incidence(ids, n_rows) @ flat
        return (np.asarray(grad).reshape(table.shape),)

    return _emit("gather_rows", table.data[ids], (table,), _backward)


def segment_sum(values: Tensor, segments, n: int) -> Tensor:
    """Sum the rows of ``values`` that share a segment id; empty -> 0."""
    values = _as_tensor(values)
    ids = _check_ids(segments, n, "Segment")
    if len(ids) != values.shape[0]:
        raise InvalidShapeError(
            f"Got {len(ids)} segment ids for {values.shape[0]} rows"
        )
    inc = _incidence(ids, n)
    flat = _rows(values.data, len(ids))
    data = np.asarray(inc @ flat).reshape((n,) + values.shape[1:])

    def _backward(g):
        return (g[ids],)

    return _emit("segment_sum", data, (values,), _backward)


def segment_mean(values: Tensor, segments, n: int) -> Tensor:
    """Mean of the rows of ``values`` per segment; empty segments give a
    zero row."""
    values = _as_tensor(values)
    ids = _check_ids(segments, n, "Segment")
    if len(ids) != values.shape[0]:
        raise InvalidShapeError(
            f"Got {len(ids)} segment ids for {values.shape[0]} rows"
        )
    counts = np.bincount(ids, minlength=n).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    inc = _incidence(ids, n)
    flat = _rows(values.data, len(ids))
    sums = np.asarray(inc @ flat)
    data = (sums / denom[:, None]).reshape((n,) + values.shape[1:])
    per_item = 1.0 / denom[ids]

    def _backward(g):
        g_items = _rows(g, n)[ids] * per_item[:, None]
        return (g_items.reshape(values.shape),)

    return _emit("segment_mean", data, (values,), _backward)


def segment_softmax(scores: Tensor, segments, n: int) -> Tensor:
    """Softmax of ``scores`` within each segment, with max subtraction.

    ``scores`` is (E,) or (E, h); in the latter case each column is
    normalised independently.
    """
    scores = _as_tensor(scores)
    ids = _check_ids(segments, n, "Segment")
    if len(ids) != scores.shape[0] or scores.data.ndim > 2:
        raise InvalidShapeError(
            f"Got {len(ids)} segment ids for scores of shape {scores.shape}"
        )
    s = _rows(scores.data, len(ids))
    seg_max = np.full((n, s.shape[1]), -np.inf)
    np.maximum.at(seg_max, ids, s)
    e = np.exp(s - seg_max[ids])
    inc = _incidence(ids, n)
    seg_sum = np.asarray(inc @ e)
    y = e / seg_sum[ids]

    def _backward(g):
        g = g.reshape(y.shape)
        inner = np.asarray(inc @ (g * y))
        return ((y * (g - inner[ids])).reshape(scores.shape),)

    return _emit(
        "segment_softmax", y.reshape(scores.shape), (scores,), _backward
    )


# -- loss and backward ---------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error between a (n,) prediction and target."""
    pred = _as_tensor(pred)
    target = np.asarray(
        target.data if isinstance(target, Tensor) else target,
        dtype=np.float64,
    )
    if pred.shape != target.shape:
        raise InvalidShapeError(
            f"Prediction shape {pred.shape} != target shape {target.shape}"
        )
    n = pred.data.size
    if n == 0:
        raise InvalidInputError("mse_loss needs at least one element")
    diff = pred.data - target

    def _backward(g):
        return (float(g) * 2.0 / n * diff,)

    return _emit("mse_loss", np.array(np.mean(diff**2)), (pred,), _backward)


def backward(tape: Tape, loss: Tensor):
    """Propagate d(loss)/d(.) to every leaf tensor recorded on ``tape``.

    Leaf gradients accumulate into ``Tensor.grad``; intermediate gradients
    live only for the duration of the call.
    """
    if loss.data.size != 1:
        raise InvalidShapeError(
            f"backward needs a scalar loss. Got shape {loss.shape}"
        )
    if not tape.owns(loss):
        raise InvalidInputError("The loss was not recorded on this tape")

    pending: dict[int, np.ndarray] = {
        loss.node_id: np.ones_like(loss.data)
    }
    for record in reversed(tape.records[: loss.node_id + 1]):
        g = pending.pop(record.out.node_id, None)
        if g is None:
            continue
        for inp, g_in in zip(record.inputs, record.backward_fn(g)):
            if g_in is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = g_in.copy() if inp.grad is None else inp.grad + g_in
            else:
                prev = pending.get(inp.node_id)
                pending[inp.node_id] = g_in if prev is None else prev + g_in


def zero_grad(params):
    """Drop accumulated gradients of a ``{name: Tensor}`` mapping."""
    for p in params.values():
        p.grad = None
