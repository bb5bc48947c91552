"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every trainable operation in the model is expressed through the ops in this
module. Design constraints kept deliberately tight so the adjoint logic stays
verifiable against finite differences:

* 64-bit floats, row-major storage, no views escaping an op;
* matrices and scalars only, and the single permitted implicit broadcast is
  scalar-vs-array (everything else goes through explicit reshape/concat ops);
* record-then-backward on a thread-local tape; a tape is consumed by one
  backward pass and rejects a second one.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

ELU_OFFSET_EPS = 1e-15


class DimensionError(ValueError):
    """Operand shapes violate an op's contract."""


class ContractError(RuntimeError):
    """An op was used outside its stated contract (non-scalar loss, reused tape, ...)."""


class Tensor:
    """A dense float64 array plus gradient metadata.

    ``grad`` is populated by ``GradientTape.backward`` for watched tensors and
    is a plain ndarray of the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level ops so the
    # tape sees a single code path.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


_STATE = threading.local()


def _active_tape() -> "GradientTape | None":
    return getattr(_STATE, "tape", None)


class GradientTape:
    """Records ops in execution order; ``backward`` replays them reversed.

    Tensors and the tape recording them are confined to one thread; separate
    tapes on separate threads do not interact.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple, Callable]] = []
        self._watched: list[Tensor] = []
        self._watched_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        if _active_tape() is not None:
            raise ContractError("nested gradient tapes are not supported")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STATE.tape = None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if id(t) not in self._watched_ids:
                self._watched_ids.add(id(t))
                self._watched.append(t)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate adjoints of ``loss`` for every watched tensor.

        Returns a mapping keyed by tensor identity; unreachable watched
        tensors get a zero gradient of matching shape. A second call without
        re-recording is rejected.
        """
        if self._consumed:
            raise ContractError("tape already consumed by a backward pass; re-record first")
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise ContractError("backward on a non-finite loss")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._ops):
            g = grads.get(id(out))
            if g is None:
                continue
            for t, contrib in zip(inputs, vjp(g)):
                if contrib is None:
                    continue
                acc = grads.get(id(t))
                if acc is None:
                    grads[id(t)] = np.array(contrib, dtype=np.float64, copy=True)
                else:
                    acc += contrib

        out_map: dict[Tensor, np.ndarray] = {}
        for t in self._watched:
            g = grads.get(id(t))
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            out_map[t] = g
        return out_map


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return out
    live = [t for t in inputs if t.requires_grad or t._tape is tape]
    if not live:
        return out
    out._tape = tape
    tape._ops.append((out, tuple(inputs), vjp))
    for t in live:
        if t.requires_grad:
            tape.watch(t)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=False, name=name)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), vjp)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return  # scalar broadcast, the only broadcast supported
    raise DimensionError(f"{op} shapes {a.data.shape} vs {b.data.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)  # only the scalar-broadcast case reaches here


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g):
        return _reduce_to(g, ash), _reduce_to(g, bsh)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g):
        return _reduce_to(g, ash), _reduce_to(-g, bsh)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (g * mask,))


def elu_offset(x: Tensor, eps: float = ELU_OFFSET_EPS) -> Tensor:
    """ELU(x) + 1 + eps: strictly positive for all finite inputs."""
    x = as_tensor(x)
    pos = x.data > 0
    ex = np.exp(np.where(pos, 0.0, x.data))
    y = np.where(pos, x.data + 1.0 + eps, ex + eps)
    out = Tensor(y)
    deriv = np.where(pos, 1.0, ex)
    return _record(out, (x,), lambda g: (g * deriv,))


def softmax(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# shape and reduction ops


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g / (2.0 * y),))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    xd = x.data
    return _record(out, (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient flows only through the interior."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    interior = (x.data > lo) & (x.data < hi)
    return _record(out, (x,), lambda g: (g * interior,))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sum(x.data))
    shape = x.data.shape
    return _record(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.mean(x.data))
    shape, n = x.data.shape, x.data.size
    return _record(out, (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def sum_axis(x: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"sum axis {axis} invalid for shape {x.data.shape}")
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))
    shape = x.data.shape

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _record(out, (x,), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape {x.data.shape} -> {shape}") from exc
    orig = x.data.shape
    return _record(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.data.shape}")
    out = Tensor(x.data.T.copy())
    return _record(out, (x,), lambda g: (g.T.copy(),))


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = {p.data.shape[1] for p in parts if p.data.ndim == 2}
    if any(p.data.ndim != 2 for p in parts) or len(widths) != 1:
        raise DimensionError("concat_rows needs matrices of equal width")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]

    def vjp(g):
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, cuts, axis=0))

    return _record(out, tuple(parts), vjp)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    heights = {p.data.shape[0] for p in parts if p.data.ndim == 2}
    if any(p.data.ndim != 2 for p in parts) or len(heights) != 1:
        raise DimensionError("concat_cols needs matrices of equal height")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]

    def vjp(g):
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, cuts, axis=1))

    return _record(out, tuple(parts), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] of shape {x.data.shape}")
    out = Tensor(x.data[start:stop, :].copy())
    shape = x.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop, :] = g
        return (full,)

    return _record(out, (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] of shape {x.data.shape}")
    out = Tensor(x.data[:, start:stop].copy())
    shape = x.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (x,), vjp)


def tile_cols(v: Tensor, n: int) -> Tensor:
    """Repeat a column vector (m, 1) across n columns via an explicit product."""
    v = as_tensor(v)
    if v.data.ndim != 2 or v.data.shape[1] != 1:
        raise DimensionError(f"tile_cols needs an (m, 1) column, got {v.data.shape}")
    return matmul(v, constant(np.ones((1, n))))


def tile_rows(r: Tensor, n: int) -> Tensor:
    """Repeat a row vector (1, m) across n rows via an explicit product."""
    r = as_tensor(r)
    if r.data.ndim != 2 or r.data.shape[0] != 1:
        raise DimensionError(f"tile_rows needs a (1, m) row, got {r.data.shape}")
    return matmul(constant(np.ones((n, 1))), r)


# ---------------------------------------------------------------------------
# verification oracle


def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients of ``f`` and central differences.

    ``f`` must be deterministic (fix any noise draws before calling); this is
    checked by evaluating it twice. The error for each parameter element is
    |analytic - numeric| / max(|numeric|, 1e-8) and the max over all elements
    of all parameters is returned.
    """
    y0 = f().item()
    if f().item() != y0:
        raise ContractError("finite_diff_check requires a deterministic function")

    with GradientTape() as tape:
        tape.watch(*params.values())
        loss = f()
    grads = tape.backward(loss)

    worst = 0.0
    for t in params.values():
        analytic = grads[t].reshape(-1)
        for i in range(t.data.size):
            idx = np.unravel_index(i, t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = f().item()
            t.data[idx] = orig - h
            down = f().item()
            t.data[idx] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
