"""Joint loss, SGD with optional physics ramp-up, training loop, logs and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .concepts import concept_loss
from .data import SampleSet
from .errors import ConfigError, NumericError, TrainingError
from .model import ModelConfig, concepts
from .physics import RESIDUAL_NAMES, PhysicsWeights, physics_loss, predict_head, residuals

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "CPF1"
LOG_COLUMNS = ("step", "total", "data", "phys", "concept", "reg", "grad_norm", "lambda_phys", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01
    # eta_t = lr / (1 + t)^lr_decay; None means 0 (constant) normally and 0.6 in ramp mode
    lr_decay: float | None = None
    lambda_phys: float = 1.0
    lambda_con: float = 1.0
    lambda_reg: float = 1e-4
    physics_weights: PhysicsWeights = field(default_factory=PhysicsWeights)
    ramp: bool = False
    ramp_lambda0: float = 0.1
    ramp_rho: float = 0.01
    max_steps: int | None = None
    # rescale the gradient to this L2 norm when it is larger; None disables clipping
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("lambda_phys", "lambda_con", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if self.ramp:
            if not 0.5 < self.decay <= 1.0:
                raise ConfigError(f"ramp mode needs 0.5 < lr_decay <= 1, got {self.decay}")
            if not 0.0 < self.ramp_rho < 1.0:
                raise ConfigError(f"ramp mode needs 0 < ramp_rho < 1, got {self.ramp_rho}")
            if not self.ramp_lambda0 > 0:
                raise ConfigError(f"ramp mode needs ramp_lambda0 > 0, got {self.ramp_lambda0}")
        elif self.decay < 0:
            raise ConfigError(f"lr_decay must be non-negative, got {self.decay}")

    @property
    def decay(self) -> float:
        if self.lr_decay is not None:
            return self.lr_decay
        return 0.6 if self.ramp else 0.0

    def learning_rate(self, step: int) -> float:
        return self.lr / (1.0 + step) ** self.decay

    def physics_lambda(self, step: int) -> float:
        return ramp_schedule(self.ramp_lambda0, self.ramp_rho, step) if self.ramp else self.lambda_phys


@dataclass
class LossBreakdown:
    data: float
    phys: float
    concept: float
    reg: float
    total: float
    residual_ms: dict[str, float]
    lambda_phys: float
    lambda_con: float
    lambda_reg: float

    def recomposed(self) -> float:
        return self.data + self.lambda_phys * self.phys + self.lambda_con * self.concept + self.lambda_reg * self.reg

    def __str__(self) -> str:
        return (f"total={self.total:.6g} data={self.data:.6g} phys={self.phys:.6g} "
                f"concept={self.concept:.6g} reg={self.reg:.6g}")


@dataclass
class StepRecord:
    step: int
    breakdown: LossBreakdown
    grad_norm: float  # squared gradient norm
    lambda_phys: float
    lr: float


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name in ("grad_norm", "lambda_phys", "lr", "step"):
            return np.array([getattr(r, name) for r in self.records])
        return np.array([getattr(r.breakdown, name) for r in self.records])

    def to_csv(self, path) -> None:
        lines = [",".join(LOG_COLUMNS)]
        for r in self.records:
            b = r.breakdown
            row = (r.step, b.total, b.data, b.phys, b.concept, b.reg, r.grad_norm, r.lambda_phys, r.lr)
            lines.append(",".join(repr(v) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def ramp_schedule(lambda0: float, rho: float, t: int) -> float:
    """Geometric physics-penalty ramp lambda0 (1 + rho)^t."""
    if not lambda0 > 0 or not 0 < rho < 1 or t < 0:
        raise ValueError(f"need lambda0 > 0, 0 < rho < 1, t >= 0; got {lambda0}, {rho}, {t}")
    return lambda0 * (1.0 + rho) ** t


def ramp_step_products(config: TrainConfig, horizon: int) -> np.ndarray:
    """eta_t * lambda_phys(t) for t < horizon: the effective physics step size."""
    steps = np.arange(horizon)
    return np.array([config.learning_rate(t) * config.physics_lambda(t) for t in steps])


def check_ramp(config: TrainConfig, horizon: int, ceiling: float = 1.0) -> float:
    """Check the ramp's effective physics step size stays below ``ceiling`` up to ``horizon``.

    A geometric ramp eventually outgrows any polynomial learning-rate decay,
    so the product cannot vanish asymptotically; only a finite horizon can be
    checked.  Returns the largest product.
    """
    if not config.ramp:
        raise ConfigError("check_ramp applies to ramp mode only")
    peak = float(ramp_step_products(config, horizon).max()) if horizon > 0 else 0.0
    if peak >= ceiling:
        raise ConfigError(f"lr * lambda_phys reaches {peak:.4g} >= {ceiling} within {horizon} steps")
    return peak


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict:
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if list(params) != list(grads):
        raise ValueError("gradient slots do not match parameter slots")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(p)}")
        out[name] = p - lr * g
    return out


def joint_loss(batch: SampleSet, params: Mapping, model: ModelConfig, config: TrainConfig, lambda_phys: float | None = None):
    """Returns (total Tensor, LossBreakdown) for one batch."""
    if len(batch) == 0:
        raise ValueError("joint_loss needs a non-empty batch")
    lam_phys = config.lambda_phys if lambda_phys is None else lambda_phys
    n = len(batch)
    windows = np.concatenate([batch.windows_prev, batch.windows_cur], axis=0)
    c_all = concepts(params, windows, model)
    c_prev, c_cur = c_all[:n], c_all[n:]

    y_hat = predict_head(c_cur, params)
    data = ad.square(y_hat - batch.y).mean()

    res = residuals(c_cur, c_prev, batch.y_prev, batch.y_prev2, params, model.epsilon)
    phys = physics_loss(res, config.physics_weights)

    concept = (concept_loss(c_prev, batch.targets_prev) + concept_loss(c_cur, batch.targets_cur)) * 0.5

    reg = None
    for p in params.values():
        term = ad.square(p).sum()
        reg = term if reg is None else reg + term

    total = data + phys * lam_phys + concept * config.lambda_con + reg * config.lambda_reg
    breakdown = LossBreakdown(
        data=float(data.value),
        phys=float(phys.value),
        concept=float(concept.value),
        reg=float(reg.value),
        total=float(total.value),
        residual_ms={k: float(np.mean(r.value**2)) for k, r in zip(RESIDUAL_NAMES, res)},
        lambda_phys=lam_phys,
        lambda_con=config.lambda_con,
        lambda_reg=config.lambda_reg,
    )
    return total, breakdown


def train(samples: SampleSet, params: Mapping[str, np.ndarray], model: ModelConfig, config: TrainConfig):
    """Plain SGD over shuffled mini-batches.  Deterministic given ``config.seed``."""
    if len(samples) == 0:
        raise ValueError("training set is empty")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    history = TrainHistory()
    rng = np.random.default_rng(config.seed)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                return params, history
            batch = samples.subset(order[lo:lo + config.batch_size])
            lam = config.physics_lambda(step)
            lr = config.learning_rate(step)
            try:
                value, grads, breakdown = ad.value_and_grad(
                    lambda p: joint_loss(batch, p, model, config, lam), params, has_aux=True)
            except NumericError as exc:
                raise TrainingError(step, str(exc)) from exc
            grad_norm = float(sum(np.sum(g * g) for g in grads.values()))
            if not (np.isfinite(value) and np.isfinite(grad_norm)):
                raise TrainingError(step, "non-finite loss or gradient", breakdown)
            history.records.append(StepRecord(step, breakdown, grad_norm, lam, lr))
            if config.clip_norm is not None and grad_norm > config.clip_norm**2:
                factor = config.clip_norm / np.sqrt(grad_norm)
                grads = {k: g * factor for k, g in grads.items()}
            params = sgd_step(params, grads, lr)
            step += 1
        log.debug("epoch %d done, step %d, last %s", epoch, step, history.records[-1].breakdown)
    return params, history


# --- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, params: Mapping[str, np.ndarray], model: ModelConfig, meta: dict | None = None) -> None:
    """Text dump: magic line, JSON header, then one line per slot (name, shape, values)."""
    header = {"model": model.to_dict(), **(meta or {})}
    lines = [CHECKPOINT_MAGIC, json.dumps(header, sort_keys=True)]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t" + " ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict, ModelConfig, dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    header = json.loads(lines[1])
    model_fields = {f.name for f in fields(ModelConfig)}
    model = ModelConfig(**{k: v for k, v in header.pop("model").items() if k in model_fields})
    params = {}
    for line in lines[2:]:
        name, shape, values = line.split("\t")
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        vals = np.array([float(v) for v in values.split()] if values else [], dtype=np.float64)
        params[name] = vals.reshape(dims)
    return params, model, header


def train_config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["physics_weights"] = list(config.physics_weights.as_tuple())
    return out
