"""Causal Transformer encoder: window of L values -> latent vector z of width d."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class EncoderConfig:
    L: int = 120
    d: int = 64
    H: int = 4
    N_L: int = 2

    def __post_init__(self):
        for name in ("L", "d", "H"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.N_L < 0:
            raise ConfigError(f"N_L must be non-negative, got {self.N_L}")
        if self.L < 2:
            raise ConfigError(f"L must be at least 2, got {self.L}")
        if self.d % self.H:
            raise ConfigError(f"d={self.d} must be divisible by H={self.H}")
        if self.d % 2:
            raise ConfigError(f"d must be even for sinusoidal positions, got {self.d}")


def sinusoidal_positions(L: int, d: int) -> np.ndarray:
    """Fixed position table: P[i, 2k] = sin(i / 10^(4k/d)), P[i, 2k+1] = cos(...)."""
    if L < 1 or d < 1 or d % 2:
        raise ValueError(f"need L >= 1 and even d >= 2, got L={L}, d={d}")
    i = np.arange(L, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = i / 10.0 ** (4.0 * k / d)
    P = np.empty((L, d))
    P[:, 0::2] = np.sin(angle)
    P[:, 1::2] = np.cos(angle)
    return P


def causal_mask(L: int) -> np.ndarray:
    """0 on and below the diagonal, -inf strictly above it."""
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    return np.where(np.triu(np.ones((L, L), dtype=bool), k=1), -np.inf, 0.0)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_encoder(config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder") -> dict:
    d, dh = config.d, config.d // config.H
    params = {f"{prefix}.W_e": _glorot(rng, 1, d, (1, d))}
    for b in range(config.N_L):
        for h in range(config.H):
            for w in ("W_Q", "W_K", "W_V"):
                params[f"{prefix}.block{b}.head{h}.{w}"] = _glorot(rng, d, dh, (d, dh))
        params[f"{prefix}.block{b}.W_o"] = _glorot(rng, d, d, (d, d))
        params[f"{prefix}.block{b}.ln_scale"] = np.ones(d)
        params[f"{prefix}.block{b}.ln_shift"] = np.zeros(d)
    return params


def embed_window(window, W_e, positions: np.ndarray) -> ad.Tensor:
    """H0 = outer(window, W_e) + P.  ``window`` may carry leading batch axes."""
    window = np.asarray(window, dtype=np.float64)
    bad = np.argwhere(~np.isfinite(window))
    if bad.size:
        raise DataError(f"non-finite window value at index {tuple(int(i) for i in bad[0])}")
    return ad.as_tensor(window[..., None]) * W_e + positions


def encoder_block(
    H_in,
    params: Mapping,
    mask: np.ndarray,
    config: EncoderConfig,
    prefix: str,
    attention: list | None = None,
) -> ad.Tensor:
    """LN(H + MHA(H)) with per-head scores scaled by 1/sqrt(d).

    When ``attention`` is a list, each head's weight matrix is appended to it.
    """
    H_in = ad.as_tensor(H_in)
    scale = 1.0 / np.sqrt(config.d)
    heads = []
    for h in range(config.H):
        p = f"{prefix}.head{h}"
        Q = H_in @ params[f"{p}.W_Q"]
        K = H_in @ params[f"{p}.W_K"]
        V = H_in @ params[f"{p}.W_V"]
        alpha = ad.masked_softmax((Q @ K.T) * scale, mask)
        if attention is not None:
            attention.append(alpha.value)
        heads.append(alpha @ V)
    mha = ad.concatenate(heads, axis=-1) @ params[f"{prefix}.W_o"]
    return ad.layer_norm(H_in + mha, params[f"{prefix}.ln_scale"], params[f"{prefix}.ln_shift"])


def encode_sequence(window, params: Mapping, config: EncoderConfig, prefix: str = "encoder") -> ad.Tensor:
    """Full token matrix H^(N_L), shape [..., L, d]."""
    H = embed_window(window, params[f"{prefix}.W_e"], sinusoidal_positions(config.L, config.d))
    mask = causal_mask(config.L)
    for b in range(config.N_L):
        H = encoder_block(H, params, mask, config, f"{prefix}.block{b}")
    return H


def encode(window, params: Mapping, config: EncoderConfig, prefix: str = "encoder") -> ad.Tensor:
    """Latent history vector: the last token row of the final block."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-1] != config.L:
        raise DataError(f"window length {window.shape[-1]} != L={config.L}")
    return encode_sequence(window, params, config, prefix)[..., -1, :]
