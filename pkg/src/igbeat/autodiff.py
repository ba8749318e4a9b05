"""Small tape-based reverse-mode differentiation over float64 numpy arrays.

Operations are recorded only while a :class:`Tape` is active (``with Tape()
as tape:``) and at least one operand requires a gradient. Outside a tape the
same functions simply compute values, which is what inference uses.

Broadcasting is limited to a trailing-shape operand against a batched one,
e.g. a ``(d,)`` bias added to a ``(B, d)`` activation.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("igbeat_tape", default=None)


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_tape")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.value.shape)
        else:
            self.grad += g

    def backward(self):
        if self._tape is None:
            raise GradientError("tensor was not produced on a tape")
        self._tape.backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


class Tape:
    """Ordered record of primitive applications, replayed once in reverse."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor | None, backward_fn: Callable):
        """Append a node. ``out=None`` marks a node that always runs during replay."""
        if self._consumed:
            raise GradientError("tape already replayed; start a new Tape")
        if out is not None:
            out.requires_grad = True
            out._tape = self
        self._nodes.append((out, backward_fn))

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise GradientError(f"loss must be a scalar, got shape {loss.shape}")
        if self._consumed:
            raise GradientError("backward already called on this tape; reset by recording on a new Tape")
        if loss.requires_grad and loss._tape is not self:
            raise GradientError("loss is not connected to this tape")
        self._consumed = True
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for out, fn in reversed(self._nodes):
            if out is None:
                fn(None, grads)
                continue
            g = grads.pop(id(out), None)
            if g is None:
                continue
            fn(g, grads)
        self._nodes.clear()


def _tape_for(*tensors: Tensor) -> Tape | None:
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return None
    for t in tensors:
        if t.requires_grad:
            return tape
    return None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _send(grads: dict, t: Tensor, g: np.ndarray):
    """Route an upstream gradient to ``t``: leaves accumulate, interior nodes buffer."""
    if not t.requires_grad:
        return
    if t._tape is None:
        t._accumulate(g)
        return
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def custom_op(value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Register a hand-differentiated primitive.

    ``vjp(g)`` maps the upstream gradient of the output to one gradient per
    input (``None`` for inputs that need none), each shaped like that input.
    """
    out = Tensor(value)
    tape = _tape_for(*inputs)
    if tape is not None:
        def fn(g, grads):
            for t, gt in zip(inputs, vjp(g)):
                if gt is not None and t.requires_grad:
                    if gt.shape != t.shape:
                        raise ShapeError(f"custom_op: gradient shape {gt.shape} for input {t.shape}")
                    _send(grads, t, gt)
        tape.record(out, fn)
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.value + b.value)
    tape = _tape_for(a, b)
    if tape is not None:
        def fn(g, grads):
            _send(grads, a, _reduce_to(g, a.shape))
            _send(grads, b, _reduce_to(g, b.shape))
        tape.record(out, fn)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.value - b.value)
    tape = _tape_for(a, b)
    if tape is not None:
        def fn(g, grads):
            _send(grads, a, _reduce_to(g, a.shape))
            _send(grads, b, -_reduce_to(g, b.shape))
        tape.record(out, fn)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim and b.ndim:
        _check_broadcast("mul", a, b)
    out = Tensor(a.value * b.value)
    tape = _tape_for(a, b)
    if tape is not None:
        def fn(g, grads):
            if a.requires_grad:
                _send(grads, a, _reduce_to(g * b.value, a.shape))
            if b.requires_grad:
                _send(grads, b, _reduce_to(g * a.value, b.shape))
        tape.record(out, fn)
    return out


def _unary(x: Tensor, value: np.ndarray, local_grad: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    out = Tensor(value)
    tape = _tape_for(x)
    if tape is not None:
        tape.record(out, lambda g, grads: _send(grads, x, local_grad(g)))
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    v = np.exp(x.value)
    return _unary(x, v, lambda g: g * v)


def log(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.log(x.value), lambda g: g / x.value)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    v = np.tanh(x.value)
    return _unary(x, v, lambda g: g * (1.0 - v * v))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(z/2)) never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = _sigmoid(x.value)
    return _unary(x, v, lambda g: g * v * (1.0 - v))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.logaddexp(0.0, x.value), lambda g: g * _sigmoid(x.value))


def clip_straight_through(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes unchanged inside, zero outside."""
    if not lo < hi:
        raise ValueError(f"clip bounds must satisfy lo < hi, got ({lo}, {hi})")
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _unary(x, np.clip(x.value, lo, hi), lambda g: g * inside)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.value @ b.value)
    tape = _tape_for(a, b)
    if tape is not None:
        def fn(g, grads):
            av, bv = a.value, b.value
            if a.requires_grad:
                ga = g @ bv.T if bv.ndim == 2 else np.multiply.outer(g, bv)
                _send(grads, a, ga)
            if b.requires_grad:
                if av.ndim == 2:
                    gb = av.T @ g
                else:
                    gb = np.multiply.outer(av, g)
                _send(grads, b, gb)
        tape.record(out, fn)
    return out


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sum(x.value, axis=axis))
    tape = _tape_for(x)
    if tape is not None:
        def fn(g, grads):
            if axis is None:
                _send(grads, x, np.broadcast_to(g, x.shape))
            else:
                _send(grads, x, np.broadcast_to(np.expand_dims(g, axis), x.shape))
        tape.record(out, fn)
    return out


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        v = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _unary(x, v, lambda g: g.reshape(x.shape))


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.value[index])
    tape = _tape_for(x)
    if tape is not None:
        def fn(g, grads):
            full = np.zeros_like(x.value)
            full[index] = g
            _send(grads, x, full)
        tape.record(out, fn)
    return out


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        v = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    out = Tensor(v)
    tape = _tape_for(*tensors)
    if tape is not None:
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
        def fn(g, grads):
            for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
                _send(grads, t, part)
        tape.record(out, fn)
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}")
    out = Tensor(np.stack([t.value for t in tensors], axis=axis))
    tape = _tape_for(*tensors)
    if tape is not None:
        def fn(g, grads):
            for i, t in enumerate(tensors):
                _send(grads, t, np.take(g, i, axis=axis))
        tape.record(out, fn)
    return out


def unstack(x, axis: int = 0) -> list[Tensor]:
    """Split along ``axis``; the pieces share one gradient buffer on the way back."""
    x = as_tensor(x)
    n = x.shape[axis]
    pieces = [Tensor(np.take(x.value, i, axis=axis)) for i in range(n)]
    tape = _tape_for(x)
    if tape is None:
        return pieces
    buf: list[np.ndarray | None] = [None]

    def flush(_, grads):
        if buf[0] is not None:
            _send(grads, x, buf[0])

    tape.record(None, flush)
    for i, piece in enumerate(pieces):
        def fn(g, grads, i=i):
            if buf[0] is None:
                buf[0] = np.zeros_like(x.value)
            idx = [slice(None)] * x.ndim
            idx[axis] = i
            buf[0][tuple(idx)] += g
        tape.record(piece, fn)
    return pieces


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    mean = x.value.mean(axis=-1, keepdims=True)
    centred = x.value - mean
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = Tensor(xhat * gamma.value + beta.value)
    tape = _tape_for(x, gamma, beta)
    if tape is not None:
        def fn(g, grads):
            if gamma.requires_grad:
                _send(grads, gamma, _reduce_to(g * xhat, gamma.shape))
            if beta.requires_grad:
                _send(grads, beta, _reduce_to(g, beta.shape))
            if x.requires_grad:
                gx = g * gamma.value
                gx = inv_std * (
                    gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
                _send(grads, x, gx)
        tape.record(out, fn)
    return out


# ---------------------------------------------------------------- optimiser


class Adam:
    """Adam with bias correction. Keeps one pair of moment buffers per tensor."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        missing = [p.name or repr(p) for p in self.params if p.grad is None]
        if missing:
            raise GradientError(f"no gradient populated for {missing}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def adam_step(optimizer: Adam):
    optimizer.step()
