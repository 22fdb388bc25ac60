"""Model assembly: encoder -> concept bottleneck -> prediction head."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .concepts import N_CONCEPTS, concept_forward, init_concepts
from .encoder import EncoderConfig, encode, init_encoder
from .errors import ConfigError
from .physics import EPSILON, init_physics, predict_head


@dataclass(frozen=True)
class ModelConfig:
    L: int = 120
    d: int = 64
    H: int = 4
    N_L: int = 2
    d1: int = 32
    head_hidden: tuple[int, ...] = (128, 64)
    tau: int = 25
    epsilon: float = EPSILON
    # five independent encoder + single-output bottleneck stacks instead of a shared encoder
    disjoint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))
        self.encoder  # validates L, d, H, N_L
        if self.d1 < 1 or any(h < 1 for h in self.head_hidden):
            raise ConfigError("d1 and head widths must be positive")
        if self.tau < 2:
            raise ConfigError(f"tau must be at least 2, got {self.tau}")
        if self.L < self.tau + 1:
            raise ConfigError(f"L={self.L} must be at least tau+1={self.tau + 1}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(L=self.L, d=self.d, H=self.H, N_L=self.N_L)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["head_hidden"] = list(self.head_hidden)
        return out


def init_params(config: ModelConfig, seed: int) -> dict:
    """Fresh ParamSet; the construction order fixes the iteration order."""
    rng = np.random.default_rng(seed)
    params: dict = {}
    if config.disjoint:
        for k in range(N_CONCEPTS):
            params.update(init_encoder(config.encoder, rng, prefix=f"stack{k}.encoder"))
            params.update(init_concepts(config.d, config.d1, rng, prefix=f"stack{k}.concepts", n_out=1))
    else:
        params.update(init_encoder(config.encoder, rng))
        params.update(init_concepts(config.d, config.d1, rng))
    params.update(init_physics(rng, config.head_hidden))
    return params


def concepts(params: Mapping, windows, config: ModelConfig) -> ad.Tensor:
    """Concept vectors for windows of shape [..., L] -> [..., 5]."""
    if not config.disjoint:
        return concept_forward(encode(windows, params, config.encoder), params)
    cols = []
    for k in range(N_CONCEPTS):
        z = encode(windows, params, config.encoder, prefix=f"stack{k}.encoder")
        cols.append(concept_forward(z, params, prefix=f"stack{k}.concepts"))
    return ad.concatenate(cols, axis=-1)


def predict(params: Mapping, windows, config: ModelConfig) -> np.ndarray:
    """One-step forecasts for windows of shape [..., L]; no gradient bookkeeping."""
    return predict_head(concepts(params, windows, config), params).value
