"""Physics-informed head: prediction MLP, driven-damped ODE drift, residuals, loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .concepts import N_CONCEPTS

EPSILON = 1e-6
GAMMA_INIT = 0.01  # start near the undamped limit; the Ry residual pulls gamma up if the data want it
RESIDUAL_NAMES = ("R1", "R2", "R3", "R4", "Ry")


@dataclass(frozen=True)
class PhysicsWeights:
    """Per-residual weights (lambda_1..lambda_4, lambda_y)."""

    r1: float = 1.0
    r2: float = 1.0
    r3: float = 1.0
    r4: float = 1.0
    ry: float = 1.0

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise ValueError(f"physics weights must be non-negative, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.r1, self.r2, self.r3, self.r4, self.ry)


class ResidualVector(NamedTuple):
    R1: ad.Tensor
    R2: ad.Tensor
    R3: ad.Tensor
    R4: ad.Tensor
    Ry: ad.Tensor


def init_physics(rng: np.random.Generator, hidden: Sequence[int] = (128, 64)) -> dict:
    widths = [N_CONCEPTS, *hidden, 1]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"head.W{i}"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        params[f"head.b{i}"] = np.zeros(fan_out)
    params["physics.beta"] = np.zeros(N_CONCEPTS + 1)
    params["physics.gamma_raw"] = np.array(np.log(np.expm1(GAMMA_INIT)))  # softplus^-1
    return params


def _head_depth(params: Mapping) -> int:
    n = 0
    while f"head.W{n + 1}" in params:
        n += 1
    return n


def predict_head(c, params: Mapping) -> ad.Tensor:
    """y_hat = MLP(c): ReLU between layers, linear output.  c has shape [..., 5]."""
    h = ad.as_tensor(c)
    squeeze = h.ndim == 1
    if squeeze:
        h = h[None, :]
    depth = _head_depth(params)
    for i in range(1, depth + 1):
        h = h @ ad.transpose(params[f"head.W{i}"]) + params[f"head.b{i}"]
        if i < depth:
            h = ad.relu(h)
    y = h[..., 0]
    return y[0] if squeeze else y


def gamma(params: Mapping) -> ad.Tensor:
    """Relaxation rate, kept positive by a softplus reparameterisation."""
    return ad.softplus(params["physics.gamma_raw"])


def ode_rhs(y_prev, c, beta, gamma_) -> ad.Tensor:
    """F = beta0 + sum_k beta_k c_k - gamma (y_prev - c_1)."""
    c = ad.as_tensor(c)
    beta = ad.as_tensor(beta)
    drive = (c * beta[1:]).sum(axis=-1)
    return beta[0] + drive - gamma_ * (ad.as_tensor(y_prev) - c[..., 0])


def residuals(c_t, c_prev, y_prev, y_prev2, params: Mapping, eps: float = EPSILON) -> ResidualVector:
    """The five algebraic residuals, evaluated on observed y_{t-1}, y_{t-2}."""
    c_t, c_prev = ad.as_tensor(c_t), ad.as_tensor(c_prev)
    y_prev = np.asarray(y_prev, dtype=np.float64)
    y_prev2 = np.asarray(y_prev2, dtype=np.float64)
    level, growth, power, vol = c_t[..., 0], c_t[..., 1], c_t[..., 2], c_t[..., 4]
    F = ode_rhs(y_prev, c_t, params["physics.beta"], gamma(params))
    return ResidualVector(
        R1=level - c_prev[..., 0] - growth,
        R2=growth - c_prev[..., 1] - power / (y_prev + eps),
        R3=power - y_prev * growth,
        R4=ad.square(vol) - ad.square(c_prev[..., 4]) - 2.0 * (y_prev - level) * growth,
        Ry=(y_prev - y_prev2) - F,
    )


def physics_loss(res: ResidualVector, weights: PhysicsWeights = PhysicsWeights()) -> ad.Tensor:
    """Batch mean of the weighted sum of squared residuals."""
    if res.R1.value.size == 0:
        raise ValueError("physics_loss needs a non-empty batch")
    total = None
    for w, r in zip(weights.as_tuple(), res):
        term = ad.square(r) * w
        total = term if total is None else total + term
    return total.mean()


def euler_ode_series(
    n: int,
    beta: Sequence[float],
    gamma_: float,
    concepts: np.ndarray,
    y0: float = 0.0,
) -> np.ndarray:
    """Series whose increments satisfy y[s] - y[s-1] = F(y[s], concepts[s+1]).

    This is the unit-step integration that makes the Ry residual vanish:
    the drift at step s is evaluated at the new state, and since F is affine
    in y the step has the closed form used below.  ``concepts`` has shape
    [n + 1, 5]; row s + 1 drives the step into y[s].
    """
    beta = np.asarray(beta, dtype=np.float64)
    concepts = np.asarray(concepts, dtype=np.float64)
    if concepts.shape != (n + 1, N_CONCEPTS):
        raise ValueError(f"concepts must have shape ({n + 1}, {N_CONCEPTS})")
    y = np.empty(n)
    y[0] = y0
    for s in range(1, n):
        c = concepts[s + 1]
        drive = beta[0] + beta[1:] @ c + gamma_ * c[0]
        y[s] = (y[s - 1] + drive) / (1.0 + gamma_)
    return y
