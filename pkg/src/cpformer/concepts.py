"""Five-concept bottleneck: learned projection, causal soft targets, alignment loss."""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import DataError

CONCEPT_NAMES = ("level", "growth", "power", "amplitude", "volatility")
N_CONCEPTS = len(CONCEPT_NAMES)


@dataclass(frozen=True)
class ConceptVector:
    level: float
    growth: float
    power: float
    periodic_amplitude: float
    volatility: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


@dataclass(frozen=True)
class SoftTargets:
    level: float
    growth: float
    power: float
    periodic_amplitude: float
    volatility: float
    a1: float
    b1: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self)[:N_CONCEPTS])


def init_concepts(d: int, d1: int, rng: np.random.Generator, prefix: str = "concepts", n_out: int = N_CONCEPTS) -> dict:
    l1 = np.sqrt(6.0 / (d + d1))
    l2 = np.sqrt(6.0 / (d1 + n_out))
    return {
        f"{prefix}.W1": rng.uniform(-l1, l1, size=(d1, d)),
        f"{prefix}.b1": np.zeros(d1),
        f"{prefix}.W2": rng.uniform(-l2, l2, size=(n_out, d1)),
        f"{prefix}.b2": np.zeros(n_out),
    }


def concept_forward(z, params: Mapping, prefix: str = "concepts") -> ad.Tensor:
    """c = W2 relu(W1 z + b1) + b2, with z of shape [..., d]."""
    z = ad.as_tensor(z)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    hidden = ad.relu(z @ ad.transpose(params[f"{prefix}.W1"]) + params[f"{prefix}.b1"])
    c = hidden @ ad.transpose(params[f"{prefix}.W2"]) + params[f"{prefix}.b2"]
    return c[0] if squeeze else c


def first_harmonic(x) -> tuple[float, float, float]:
    """Bin-1 DFT coefficients normalised by 1/tau, and the implied amplitude.

    With this normalisation a sampled sinusoid A cos(2 pi j / tau + phi)
    has amplitude exactly A.
    """
    x = np.asarray(x, dtype=np.float64)
    a1, b1, amp = first_harmonic_batch(x[None, :])
    return float(a1[0]), float(b1[0]), float(amp[0])


def first_harmonic_batch(x: np.ndarray):
    tau = x.shape[-1]
    if tau < 2:
        raise ValueError(f"need at least 2 samples, got {tau}")
    X1 = np.fft.fft(x, axis=-1)[..., 1] / tau
    a1, b1 = X1.real, X1.imag
    return a1, b1, 2.0 * np.hypot(a1, b1)


def soft_target_matrix(windows, tau: int) -> np.ndarray:
    """Soft targets for each row of ``windows`` (shape [..., n]), using its last tau+1 values.

    Column order follows CONCEPT_NAMES.  Only values inside the given rows
    are read, so callers control causality by what they pass in.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if tau < 2:
        raise ValueError(f"tau must be at least 2, got {tau}")
    if windows.shape[-1] < tau + 1:
        raise DataError(f"soft targets need at least tau+1={tau + 1} past values, got {windows.shape[-1]}")
    recent = windows[..., -tau:]
    level = recent.mean(axis=-1)
    growth = windows[..., -1] - windows[..., -2]
    power = windows[..., -1] * growth
    centred = recent - level[..., None]
    _, _, amplitude = first_harmonic_batch(centred)
    volatility = np.sqrt((centred**2).mean(axis=-1))
    return np.stack([level, growth, power, amplitude, volatility], axis=-1)


def soft_targets(history, tau: int) -> SoftTargets:
    """Soft targets at time t from the tau+1 (or more) values strictly before t."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 1:
        raise ValueError("history must be one-dimensional")
    if history.size < tau + 1:
        raise DataError(f"soft targets need at least tau+1={tau + 1} past values, got {history.size}")
    row = soft_target_matrix(history, tau)
    a1, b1, _ = first_harmonic(history[-tau:] - row[0])
    return SoftTargets(*(float(v) for v in row), a1=a1, b1=b1)


def concept_loss(c_batch, target_batch) -> ad.Tensor:
    """Mean over the batch of the squared Euclidean distance to the targets."""
    c_batch = ad.as_tensor(c_batch)
    target_batch = np.asarray(target_batch, dtype=np.float64)
    if c_batch.shape[0] == 0:
        raise ValueError("concept_loss needs a non-empty batch")
    if c_batch.shape != target_batch.shape:
        raise ValueError(f"batch shape mismatch: {c_batch.shape} vs {target_batch.shape}")
    return ad.square(c_batch - target_batch).sum(axis=-1).mean()
