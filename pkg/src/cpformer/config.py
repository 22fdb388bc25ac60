"""Run configuration: flat JSON file plus command-line overrides, validated up front."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError, DataError
from .model import ModelConfig
from .physics import PhysicsWeights
from .training import TrainConfig

_NULLABLE = {"lr_decay", "max_steps", "clip_norm", "horizon"}


@dataclass(frozen=True)
class RunConfig:
    # data
    data: str = "synthetic:seasonal"
    channel: str = ""
    train_frac: float = 0.7
    val_frac: float = 0.1
    standardize: bool = True
    # model
    L: int = 120
    tau: int = 25
    d: int = 64
    H: int = 4
    N_L: int = 2
    d1: int = 32
    head_h1: int = 128
    head_h2: int = 64
    epsilon: float = 1e-6
    # loss weights
    lambda_1: float = 1.0
    lambda_2: float = 1.0
    lambda_3: float = 1.0
    lambda_4: float = 1.0
    lambda_y: float = 1.0
    lambda_phys: float = 1.0
    lambda_con: float = 1.0
    lambda_reg: float = 1e-4
    # optimisation
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float | None = None
    ramp: bool = False
    ramp_lambda0: float = 0.1
    ramp_rho: float = 0.01
    max_steps: int | None = None
    clip_norm: float | None = 5.0
    seed: int = 0
    # evaluation and reports
    horizon: int | None = None
    stride: int = 1
    noise_fraction: float = 0.3
    bins: int = 32
    n_seeds: int = 5
    checkpoint: str = ""
    predictions: str = ""  # plot: render this t,y_true,y_pred dump instead of predicting
    out_dir: str = "runs"

    def __post_init__(self):
        if not 0 < self.train_frac < 1 or not 0 < self.val_frac < 1 or self.train_frac + self.val_frac >= 1:
            raise ConfigError("train_frac and val_frac must be positive and sum to less than 1")
        if self.horizon is not None and self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")
        if self.bins < 2:
            raise ConfigError("bins must be at least 2")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be at least 1")
        if self.noise_fraction < 0:
            raise ConfigError("noise_fraction must be non-negative")
        # build the sub-configs so their own invariants are checked before any work
        self.model_config()
        self.train_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            L=self.L, d=self.d, H=self.H, N_L=self.N_L, d1=self.d1,
            head_hidden=(self.head_h1, self.head_h2), tau=self.tau, epsilon=self.epsilon,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        try:
            weights = PhysicsWeights(self.lambda_1, self.lambda_2, self.lambda_3, self.lambda_4, self.lambda_y)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
            lambda_phys=self.lambda_phys, lambda_con=self.lambda_con, lambda_reg=self.lambda_reg,
            physics_weights=weights, ramp=self.ramp, ramp_lambda0=self.ramp_lambda0,
            ramp_rho=self.ramp_rho, max_steps=self.max_steps, clip_norm=self.clip_norm,
            seed=self.seed if seed is None else seed,
        )

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get("CPF_OUT") or self.out_dir)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short hash of everything except where the outputs go."""
        payload = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:10]


def _field_types() -> dict[str, type]:
    types = {}
    for f in fields(RunConfig):
        types[f.name] = type(f.default) if f.default is not None else (int if f.name in ("max_steps", "horizon") else float)
    return types


def coerce(key: str, value: Any) -> Any:
    """Convert a JSON value or flag string to the type of ``key``."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    want = types[key]
    if value is None or (isinstance(value, str) and value.lower() in ("null", "none") and key in _NULLABLE):
        if key in _NULLABLE:
            return None
        raise ConfigError(f"{key}: may not be null")
    try:
        if want is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError
        if want is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if want is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {want.__name__}, got {value!r}") from None


def parse_config(path: str | os.PathLike | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a flat JSON config (if given), apply overrides, validate."""
    values: dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text() or "{}")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a flat JSON object")
        for key, value in raw.items():
            if isinstance(value, (dict, list)):
                raise ConfigError(f"{key}: nested values are not allowed")
            values[key] = coerce(key, value)
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value)
    try:
        return RunConfig(**values)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
