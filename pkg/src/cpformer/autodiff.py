"""Minimal reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` walks that order in reverse.  Outside a
tape the same functions run as plain numpy with no bookkeeping, which is what
the evaluation paths use.

All values are float64.  ReLU uses subgradient 0 at the kink.
"""

from __future__ import annotations

import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError

LAYER_NORM_EPS = 1e-5

ParamSet = dict  # name -> np.ndarray, insertion order is the iteration order
Gradients = dict

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Records differentiable operations in the order they execute.

    ``relu_patterns`` keeps the activation pattern of every ReLU evaluated
    under the tape; the gradient checker compares these to detect kink
    crossings.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.relu_patterns: list[np.ndarray] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def backward(self, root: Tensor) -> None:
        if root.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        if not root.requires_grad:
            return
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(value: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise EvaluationError(op, "non-finite value in output")
    out = Tensor(value, op=op)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.nodes.append(out)
    return out


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.value + b.value, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.value - b.value, "subtract", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.value * b.value, "multiply", (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = a.value / b.value

    def backward(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / b.value**2, b.shape),
        )

    return _result(value, "divide", (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.value**2, "square", (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        value = np.sqrt(a.value)
    return _result(value, "sqrt", (a,), lambda g: (g / (2.0 * value),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    active = a.value > 0.0
    tape = _active_tape()
    if tape is not None:
        tape.relu_patterns.append(active)
    return _result(np.where(active, a.value, 0.0), "relu", (a,), lambda g: (g * active,))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    value = np.logaddexp(0.0, a.value)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(value, "softplus", (a,), lambda g: (g * sig,))


# --- reductions and shape ---------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _result(
        np.sum(a.value, axis=axis, keepdims=keepdims), "sum", (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims),),
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return _result(
        np.mean(a.value, axis=axis, keepdims=keepdims), "mean", (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims) / n,),
    )


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _result(np.swapaxes(a.value, -1, -2), "transpose", (a,),
                   lambda g: (np.swapaxes(g, -1, -2),))


def take(a, index) -> Tensor:
    """Basic slicing / indexing, ``a[index]``."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.value[index]), "slice", (a,), backward)


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.value for t in ts], axis=axis), "concatenate", ts,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


# --- linear algebra and normalisation ----------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        return (
            _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape),
            _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape),
        )

    return _result(a.value @ b.value, "matmul", (a, b), backward)


def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the last axis with an additive {0, -inf} mask.

    Masked entries come out exactly 0.  A row with every entry masked cannot
    be normalised and raises :class:`EvaluationError`.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask.value if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if not np.all((mask == 0.0) | (mask == -np.inf)):
        raise ValueError("mask entries must be exactly 0 or -inf")
    allowed = np.broadcast_to(mask == 0.0, scores.shape)
    if not np.all(allowed.any(axis=-1)):
        raise EvaluationError("masked_softmax", "fully masked row")
    shifted = np.where(allowed, scores.value, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, "masked_softmax", (scores,), backward)


def layer_norm(x, scale, shift, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis, then apply ``scale`` and ``shift``."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    mu = x.value.mean(axis=-1, keepdims=True)
    centred = x.value - mu
    inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    n = x.shape[-1]

    def backward(g):
        dxhat = g * scale.value
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, scale.shape), _unbroadcast(g, shift.shape)

    return _result(xhat * scale.value + shift.value, "layer_norm", (x, scale, shift), backward)


# --- drivers -----------------------------------------------------------------

def value_and_grad(loss_fn: Callable, params: Mapping[str, np.ndarray], has_aux: bool = False):
    """Evaluate ``loss_fn`` on ``params`` and backpropagate.

    ``loss_fn`` receives a dict of leaf Tensors with the same names and must
    return a scalar Tensor, or ``(scalar, aux)`` when ``has_aux`` is set.
    Returns ``(value, grads)`` or ``(value, grads, aux)``.
    """
    with Tape() as tape:
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        out = loss_fn(leaves)
        aux = None
        if has_aux:
            out, aux = out
        out = as_tensor(out)
        tape.backward(out)
    grads = {
        k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for k, leaf in leaves.items()
    }
    value = float(out.value)
    return (value, grads, aux) if has_aux else (value, grads)


def _evaluate_with_pattern(loss_fn, params) -> tuple[float, list[np.ndarray]]:
    with Tape() as tape:
        out = loss_fn({k: Tensor(v) for k, v in params.items()})
        if isinstance(out, tuple):
            out = out[0]
    return float(as_tensor(out).value), tape.relu_patterns


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_errors(loss_fn: Callable, params: Mapping[str, np.ndarray], step: float = 1e-5):
    """Per-slot relative errors between analytic and central-difference gradients.

    Coordinates whose ±step perturbation flips any ReLU activation are
    skipped (the difference quotient straddles a kink there).  Returns
    ``(errors, skipped)`` where ``errors`` maps slot name to an array of
    relative errors (NaN where skipped).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-7, 1e-3], got {step}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = value_and_grad(
        lambda p: (lambda r: r[0] if isinstance(r, tuple) else r)(loss_fn(p)), params
    )
    _, base_pattern = _evaluate_with_pattern(loss_fn, params)

    errors: dict[str, np.ndarray] = {}
    skipped = 0
    for name, arr in params.items():
        err = np.full(arr.shape, np.nan)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            f_plus, pat_plus = _evaluate_with_pattern(loss_fn, params)
            arr[idx] = orig - step
            f_minus, pat_minus = _evaluate_with_pattern(loss_fn, params)
            arr[idx] = orig
            if not (_same_pattern(pat_plus, base_pattern) and _same_pattern(pat_minus, base_pattern)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = grads[name][idx]
            err[idx] = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        errors[name] = err
    return errors, skipped


def check_gradients(loss_fn: Callable, params: Mapping[str, np.ndarray], step: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central differences."""
    errors, _ = gradient_errors(loss_fn, params, step)
    worst = [np.nanmax(e) for e in errors.values() if np.any(np.isfinite(e))]
    return float(max(worst)) if worst else 0.0
