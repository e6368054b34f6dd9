"""Dense array arithmetic with a reverse-mode gradient tape.

Arrays are plain numpy ``ndarray`` values wrapped in :class:`Tensor`.  Every
primitive records one entry on the active :class:`GradTape`; outside a tape
nothing is recorded, which keeps evaluation cheap.  Leading axes are treated
as batch axes, so a ``(B, n, d)`` tensor is a batch of ``n x d`` matrices.

Two precisions exist.  ``verify`` is float64 and checks every primitive's
output for NaN/Inf; ``fast`` is float32 and only checks losses.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy import sparse

SENTINEL = -1e30
"""Score value meaning "excluded from softmax"."""

_SENTINEL_CUTOFF = SENTINEL * 0.5

ACTIVATIONS = ("sigmoid", "relu", "tanh")


class NumericError(ValueError):
    """Non-finite value encountered where finite data is required."""


class ShapeError(ValueError):
    pass


class DegenerateRowError(NumericError):
    """A softmax row had every entry masked."""


class GradCheckAborted(NumericError):
    pass


_state = {"tape": None, "check_finite": False}


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    data = np.asarray(data)
    _require_finite(data, name or "parameter")
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_finite(arr: np.ndarray, where: str) -> None:
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
    op: str


class GradTape:
    """Ordered log of primitive operations for reverse-mode differentiation.

    Usage::

        with GradTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._outer = None

    def __enter__(self) -> "GradTape":
        self._outer = _state["tape"]
        _state["tape"] = self
        return self

    def __exit__(self, *exc) -> None:
        _state["tape"] = self._outer

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]

    def gradient(self, loss: Tensor, params) -> dict[str, np.ndarray] | list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. ``params``.

        ``params`` may be a mapping name -> Tensor (returns a dict) or a
        sequence of tensors (returns a list).  Parameters the loss does not
        depend on get zero gradients of their own shape.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if isinstance(params, Mapping):
            return {
                k: _fit(grads.get(id(p)), p) for k, p in params.items()
            }
        return [_fit(grads.get(id(p)), p) for p in params]


def _fit(g, p: Tensor) -> np.ndarray:
    if g is None:
        return np.zeros_like(p.data)
    return np.asarray(g, dtype=p.data.dtype).reshape(p.data.shape)


def _record(out_data: np.ndarray, inputs, backward, op: str) -> Tensor:
    if _state["check_finite"]:
        _require_finite(out_data, op)
    tape = _state["tape"]
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(out, tuple(inputs), backward, op))
    return out


@contextlib.contextmanager
def no_tape() -> Iterator[None]:
    outer = _state["tape"]
    _state["tape"] = None
    try:
        yield
    finally:
        _state["tape"] = outer


@contextlib.contextmanager
def checked(enabled: bool = True) -> Iterator[None]:
    """Check every primitive output for NaN/Inf while active."""
    outer = _state["check_finite"]
    _state["check_finite"] = enabled
    try:
        yield
    finally:
        _state["check_finite"] = outer


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # weight shared over batch axes: flatten to one 2-d product each way
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, ad.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _record((a2 @ bd).reshape(*lead, bd.shape[1]), (a, b), backward, "matmul")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(ad @ bd, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    return _record(
        np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose"
    )


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _record(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    shape, n = a.shape, a.data.size
    return _record(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=a.data.dtype),),
        "mean",
    )


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def scatter_rows(index: np.ndarray, values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Dense ``zeros(shape)`` with ``values[k]`` summed into row ``index[k]``.

    Done as a sparse (rows x items) product, which fixes the summation order.
    """
    flat = index.reshape(-1)
    m = flat.size
    if m == 0:
        return np.zeros(shape, dtype=values.dtype)
    sel = sparse.csr_matrix(
        (np.ones(m, dtype=values.dtype), (flat, np.arange(m))), shape=(shape[0], m)
    )
    return np.asarray(sel @ values)


def gather_rows(table, index) -> Tensor:
    """``table[index]`` for a 2-d table and an integer index array of any shape.

    The backward pass scatters into the looked-up rows only.
    """
    table = _as_tensor(table)
    index = np.asarray(index, dtype=np.intp)
    shape = table.shape

    def backward(g):
        return (scatter_rows(index, g.reshape(-1, shape[1]), shape),)

    return _record(np.take(table.data, index, axis=0), (table,), backward, "gather")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(kind: str, x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    if kind == "sigmoid":
        y = _sigmoid(xd)
        back = lambda g: (g * y * (1.0 - y),)  # noqa: E731
    elif kind == "relu":
        y = np.maximum(xd, 0)
        back = lambda g: (g * (xd > 0),)  # noqa: E731
    elif kind == "tanh":
        y = np.tanh(xd)
        back = lambda g: (g * (1.0 - y * y),)  # noqa: E731
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return _record(y, (x,), back, kind)


def sigmoid(x) -> Tensor:
    return apply_activation("sigmoid", x)


def relu(x) -> Tensor:
    return apply_activation("relu", x)


def tanh(x) -> Tensor:
    return apply_activation("tanh", x)


def softmax_rows(s, mask_sentinel: float = SENTINEL) -> Tensor:
    """Softmax over the last axis; entries equal to ``mask_sentinel`` get ~0 weight.

    Raises :class:`DegenerateRowError` if any row is entirely masked.
    """
    s = _as_tensor(s)
    sd = s.data
    masked = sd <= mask_sentinel * 0.5
    if np.any(masked.all(axis=-1)):
        raise DegenerateRowError("softmax row has every entry masked")
    shifted = sd - sd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    e[masked] = 0.0
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record(p, (s,), backward, "softmax")


def mask_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value``; no gradient flows there."""
    a = _as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    return _record(out, (a,), lambda g: (np.where(mask, 0.0, g),), "mask_fill")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine parameters)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _record(y, (a,), backward, "layer_norm")


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy computed from logits (stable form)."""
    z = _as_tensor(logits)
    y = np.asarray(labels, dtype=z.data.dtype).reshape(z.shape)
    zd = z.data
    loss = np.maximum(zd, 0) - zd * y + np.log1p(np.exp(-np.abs(zd)))
    n = zd.size

    def backward(g):
        return (g * (_sigmoid(zd) - y) / n,)

    return _record(np.asarray(loss.mean()), (z,), backward, "bce")


# --------------------------------------------------------------------------
# finite-difference checking


@dataclass
class BlockCheck:
    name: str
    size: int
    max_rel_error: float
    worst_index: tuple[int, ...] | None
    passed: bool


@dataclass
class GradCheckReport:
    blocks: list[BlockCheck] = field(default_factory=list)
    tol: float = 1e-3
    h: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def failures(self) -> list[str]:
        return [b.name for b in self.blocks if not b.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "h": self.h,
            "blocks": [
                {
                    "name": b.name,
                    "size": b.size,
                    "max_rel_error": b.max_rel_error,
                    "passed": b.passed,
                }
                for b in self.blocks
            ],
        }


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-3,
    grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare tape gradients with central differences for every parameter entry.

    The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``loss_fn`` must recompute the loss from the current parameter values.
    ``grad_hook(name, grad)`` may alter the analytic gradient (negative
    controls in tests).
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.data.dtype}")
    with checked(), GradTape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)
    report = GradCheckReport(tol=tol, h=h)
    with no_tape():
        for name, p in params.items():
            g = analytic[name]
            if grad_hook is not None:
                g = grad_hook(name, g)
            flat = p.data.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    idx = np.unravel_index(i, p.shape)
                    raise GradCheckAborted(f"non-finite loss perturbing {name}{[int(v) for v in idx]}")
                numeric[i] = (up - down) / (2 * h)
            err = np.abs(g.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
            worst = int(np.argmax(err)) if err.size else None
            max_err = float(err[worst]) if worst is not None else 0.0
            report.blocks.append(
                BlockCheck(
                    name=name,
                    size=flat.size,
                    max_rel_error=max_err,
                    worst_index=None if worst is None else tuple(
                        int(v) for v in np.unravel_index(worst, p.shape)
                    ),
                    passed=max_err <= tol,
                )
            )
    return report
