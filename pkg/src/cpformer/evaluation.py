"""Metrics, rollout forecasts, persistence baseline, ablation and noise-robustness harnesses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .concepts import CONCEPT_NAMES
from .data import PreparedData, SampleSet, make_samples
from .errors import DataError
from .model import ModelConfig, concepts, init_params, predict
from .training import TrainConfig, train

ABLATION_VARIANTS = ("full", "no_physics", "no_concept", "disjoint_heads")
REFERENCE_ABLATION_MSE = {"full": 0.328, "no_physics": 0.547, "no_concept": 0.698, "disjoint_heads": 0.577}
REFERENCE_NOISE_MSE_RATIO = 1.18
REFERENCE_NOISE_KL_NATS = 0.04


def metrics(preds, truth) -> tuple[float, float]:
    """(MSE, MAE)."""
    preds = np.asarray(preds, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    if preds.size == 0:
        raise ValueError("metrics need at least one point")
    err = preds - truth
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))


def rollout_forecast(params: Mapping, windows, horizon: int, model: ModelConfig) -> np.ndarray:
    """Autoregressive multi-step forecast.

    ``windows`` is [L] or [n, L]; each prediction is appended to its window
    (dropping the oldest value) to form the next input.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    windows = np.array(windows, dtype=np.float64)
    single = windows.ndim == 1
    if single:
        windows = windows[None, :]
    out = np.empty((windows.shape[0], horizon))
    for h in range(horizon):
        step = predict(params, windows, model)
        out[:, h] = step
        windows = np.concatenate([windows[:, 1:], step[:, None]], axis=1)
    return out[0] if single else out


def persistence_baseline(segment, horizon: int = 1) -> np.ndarray:
    """Repeat the last observed value ``horizon`` times."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.size == 0:
        raise ValueError("persistence baseline needs a non-empty segment")
    return np.full(horizon, segment[-1])


@dataclass
class EvalReport:
    dataset: str
    channel: str
    mse: float
    mae: float
    baseline_mse: float
    baseline_mae: float
    horizon_mse: list[float] = field(default_factory=list)
    horizon_mae: list[float] = field(default_factory=list)
    baseline_horizon_mse: list[float] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = [("next_step", self.mse, self.mae, self.baseline_mse, self.baseline_mae)]
        for h, (m, a, b) in enumerate(zip(self.horizon_mse, self.horizon_mae, self.baseline_horizon_mse), start=1):
            out.append((f"h{h}", m, a, b, float("nan")))
        return out

    def to_csv(self, path) -> None:
        lines = ["dataset,channel,horizon,mse,mae,baseline_mse,baseline_mae"]
        for name, *vals in self.rows():
            lines.append(",".join([self.dataset, self.channel, name] + [repr(float(v)) for v in vals]))
        open(path, "w").write("\n".join(lines) + "\n")

    def pretty(self) -> str:
        lines = [
            f"{self.dataset}/{self.channel}",
            f"  next-step   MSE {self.mse:.4f}  MAE {self.mae:.4f}",
            f"  persistence MSE {self.baseline_mse:.4f}  MAE {self.baseline_mae:.4f}",
        ]
        if self.horizon_mse:
            lines.append(f"  rollout over {len(self.horizon_mse)} steps: mean MSE {np.mean(self.horizon_mse):.4f} "
                         f"(persistence {np.mean(self.baseline_horizon_mse):.4f})")
        return "\n".join(lines)


def evaluate(params: Mapping, model: ModelConfig, data: PreparedData, horizon: int = 0, stride: int = 1) -> EvalReport:
    """Next-step errors on the test split, plus rollout errors per horizon step when horizon > 0."""
    test = data.test
    preds = predict(params, test.windows_cur, model)
    mse, mae = metrics(preds, test.y)
    base_mse, base_mae = metrics(test.y_prev, test.y)
    report = EvalReport(data.series.name, data.series.channel, mse, mae, base_mse, base_mae)
    if horizon > 0:
        T = len(data.values)
        origins = np.arange(max(data.val_end, model.L), T - horizon + 1, stride)
        if origins.size == 0:
            raise DataError(f"test segment too short for horizon {horizon}")
        windows = np.stack([data.values[o - model.L:o] for o in origins])
        truth = np.stack([data.values[o:o + horizon] for o in origins])
        rolled = rollout_forecast(params, windows, horizon, model)
        naive = np.repeat(windows[:, -1:], horizon, axis=1)
        report.horizon_mse = list(np.mean((rolled - truth) ** 2, axis=0))
        report.horizon_mae = list(np.mean(np.abs(rolled - truth), axis=0))
        report.baseline_horizon_mse = list(np.mean((naive - truth) ** 2, axis=0))
    return report


def prediction_dump(params: Mapping, model: ModelConfig, samples: SampleSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(t, y_true, y_pred) for next-step forecasts on ``samples``."""
    return samples.t, samples.y, predict(params, samples.windows_cur, model)


# --- ablation ------------------------------------------------------------------------

@dataclass
class AblationReport:
    seeds: list[int]
    test_mse: dict[str, list[float]]  # variant -> per-seed test MSE

    @property
    def avg_mse(self) -> dict[str, float]:
        return {v: float(np.mean(m)) for v, m in self.test_mse.items()}

    @property
    def median_mse(self) -> dict[str, float]:
        return {v: float(np.median(m)) for v, m in self.test_mse.items()}

    @property
    def percent_change(self) -> dict[str, float]:
        avg = self.avg_mse
        return {v: 100.0 * (avg[v] - avg["full"]) / avg["full"] for v in avg}

    def to_csv(self, path) -> None:
        lines = ["variant,avg_mse,change_pct," + ",".join(f"seed{s}" for s in self.seeds)]
        avg, pct = self.avg_mse, self.percent_change
        for v in ABLATION_VARIANTS:
            lines.append(",".join([v, repr(avg[v]), repr(pct[v])] + [repr(x) for x in self.test_mse[v]]))
        open(path, "w").write("\n".join(lines) + "\n")

    def pretty(self) -> str:
        avg, pct = self.avg_mse, self.percent_change
        lines = [f"{'Variant':<16}{'Avg. MSE':>10}{'Change':>10}{'reference':>11}"]
        for v in ABLATION_VARIANTS:
            lines.append(f"{v:<16}{avg[v]:>10.4f}{pct[v]:>+9.0f}%{REFERENCE_ABLATION_MSE[v]:>11.3f}")
        return "\n".join(lines)


def variant_configs(model: ModelConfig, train_cfg: TrainConfig, variant: str) -> tuple[ModelConfig, TrainConfig]:
    if variant == "full":
        return model, train_cfg
    if variant == "no_physics":
        return model, dataclasses.replace(train_cfg, lambda_phys=0.0, ramp=False)
    if variant == "no_concept":
        return model, dataclasses.replace(train_cfg, lambda_con=0.0)
    if variant == "disjoint_heads":
        return dataclasses.replace(model, disjoint=True), train_cfg
    raise ValueError(f"unknown ablation variant {variant!r}")


def ablation_run(data: PreparedData, model: ModelConfig, train_cfg: TrainConfig, seeds: Sequence[int]) -> AblationReport:
    """Train every variant under the same seeds and splits; report test MSE."""
    test_mse: dict[str, list[float]] = {v: [] for v in ABLATION_VARIANTS}
    for variant in ABLATION_VARIANTS:
        for seed in seeds:
            m, tc = variant_configs(model, dataclasses.replace(train_cfg, seed=seed), variant)
            params, _ = train(data.train, init_params(m, seed), m, tc)
            preds = predict(params, data.test.windows_cur, m)
            test_mse[variant].append(metrics(preds, data.test.y)[0])
    return AblationReport(list(seeds), test_mse)


# --- noise robustness ------------------------------------------------------------------

def histogram_kl(p_samples, q_samples, bins: int = 32, smoothing: float = 1e-9) -> float:
    """KL(p || q) in nats from histograms on shared edges spanning both samples."""
    p_samples = np.asarray(p_samples, dtype=np.float64)
    q_samples = np.asarray(q_samples, dtype=np.float64)
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    lo = min(p_samples.min(), q_samples.min())
    hi = max(p_samples.max(), q_samples.max())
    if not hi > lo:
        raise DataError("degenerate histogram: all concept values identical")
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(p_samples, edges)[0] + smoothing
    q = np.histogram(q_samples, edges)[0] + smoothing
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


@dataclass
class RobustnessReport:
    noise_fraction: float
    clean_mse: float
    noisy_mse: float
    mse_ratio: float
    concept_kl: dict[str, float]

    @property
    def mean_kl(self) -> float:
        return float(np.mean(list(self.concept_kl.values())))

    def to_csv(self, path) -> None:
        lines = ["noise_fraction,clean_mse,noisy_mse,mse_ratio,mean_kl_nats," + ",".join(f"kl_{n}" for n in CONCEPT_NAMES)]
        vals = [self.noise_fraction, self.clean_mse, self.noisy_mse, self.mse_ratio, self.mean_kl]
        vals += [self.concept_kl[n] for n in CONCEPT_NAMES]
        lines.append(",".join(repr(float(v)) for v in vals))
        open(path, "w").write("\n".join(lines) + "\n")

    def pretty(self) -> str:
        return (f"noise {self.noise_fraction:.0%}: MSE ratio {self.mse_ratio:.3f} (reference <= {REFERENCE_NOISE_MSE_RATIO}), "
                f"mean concept KL {self.mean_kl:.4f} nats (reference <= {REFERENCE_NOISE_KL_NATS})")


def noise_robustness(
    params: Mapping,
    model: ModelConfig,
    data: PreparedData,
    noise_fraction: float,
    bins: int = 32,
    seed: int = 0,
) -> RobustnessReport:
    """Corrupt model inputs (not targets) with Gaussian noise of std noise_fraction * train std."""
    if noise_fraction < 0:
        raise ValueError(f"noise_fraction must be non-negative, got {noise_fraction}")
    rng = np.random.default_rng(seed)
    std = float(np.std(data.values[:data.train_end]))
    noisy_values = data.values + noise_fraction * std * rng.standard_normal(len(data.values))
    clean = data.test
    noisy = make_samples(noisy_values, model.L, model.tau, start=data.val_end)

    c_clean = concepts(params, clean.windows_cur, model).value
    c_noisy = concepts(params, noisy.windows_cur, model).value
    clean_mse = metrics(predict(params, clean.windows_cur, model), clean.y)[0]
    noisy_mse = metrics(predict(params, noisy.windows_cur, model), clean.y)[0]
    kl = {name: histogram_kl(c_clean[:, k], c_noisy[:, k], bins) for k, name in enumerate(CONCEPT_NAMES)}
    return RobustnessReport(noise_fraction, clean_mse, noisy_mse, noisy_mse / clean_mse, kl)
