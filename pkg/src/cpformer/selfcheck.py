"""Quick built-in verification: gradients, causality, soft-target and residual oracles.

Each check returns (ok, detail).  ``run_selfcheck`` prints one line per check
and returns a process exit status.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .concepts import soft_target_matrix
from .data import make_samples
from .encoder import EncoderConfig, causal_mask, embed_window, encoder_block, init_encoder, sinusoidal_positions
from .model import ModelConfig, init_params
from .physics import PhysicsWeights, euler_ode_series, residuals
from .training import TrainConfig, joint_loss

GRAD_TOL = 1e-4


def small_setup(seed: int, L: int = 10, d: int = 8, H: int = 2, batch: int = 4):
    """A tiny model, its params and a batch of samples, for gradient checks."""
    rng = np.random.default_rng(seed)
    tau = max(2, L - 6)
    model = ModelConfig(L=L, d=d, H=H, N_L=2, d1=6, head_hidden=(8, 6), tau=tau)
    params = init_params(model, seed)
    # move gamma and beta off their zero init so every path carries gradient
    params["physics.beta"] = rng.normal(0, 0.3, size=6)
    params["physics.gamma_raw"] = np.array(rng.normal())
    series = 2.0 + np.cumsum(rng.normal(0, 0.3, size=L + batch + 2))
    samples = make_samples(series, L, tau).subset(np.arange(batch))
    return model, params, samples


def check_gradient(seeds=(0, 1, 2)) -> tuple[bool, str]:
    worst = 0.0
    config = TrainConfig(lambda_reg=1e-3)
    for seed in seeds:
        model, params, batch = small_setup(seed)
        worst = max(worst, ad.check_gradients(lambda p: joint_loss(batch, p, model, config, 0.5)[0], params))
    return worst <= GRAD_TOL, f"max relative error {worst:.2e} over {len(seeds)} configs"


def check_causality(L: int = 16, d: int = 8, H: int = 2, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(L=L, d=d, H=H, N_L=1)
    params = init_encoder(cfg, rng)
    mask, P = causal_mask(L), sinusoidal_positions(L, d)
    window = rng.normal(size=L)
    attn: list = []
    base = encoder_block(embed_window(window, params["encoder.W_e"], P), params, mask, cfg, "encoder.block0", attn).value
    future_weight = max(float(np.abs(np.triu(a, k=1)).max()) for a in attn)
    leak = 0.0
    for i in range(L - 1):
        w = window.copy()
        w[i + 1:] += rng.normal(size=L - i - 1)
        out = encoder_block(embed_window(w, params["encoder.W_e"], P), params, mask, cfg, "encoder.block0").value
        leak = max(leak, float(np.abs(out[i] - base[i]).max()))
    ok = future_weight == 0.0 and leak <= 1e-12
    return ok, f"future attention {future_weight:g}, max row change {leak:.1e}"


def naive_soft_targets(history, tau: int) -> list[float]:
    """Loop-based soft targets; a second implementation for cross-checking."""
    y = [float(v) for v in history]
    recent = y[-tau:]
    level = sum(recent) / tau
    growth = y[-1] - y[-2]
    power = y[-1] * growth
    re = im = 0.0
    for j, v in enumerate(recent):
        re += (v - level) * math.cos(2 * math.pi * j / tau)
        im -= (v - level) * math.sin(2 * math.pi * j / tau)
    amplitude = 2.0 * math.hypot(re, im) / tau
    volatility = math.sqrt(sum((v - level) ** 2 for v in recent) / tau)
    return [level, growth, power, amplitude, volatility]


def check_soft_targets(n: int = 200, tau: int = 25, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    windows = rng.normal(size=(n, tau + 1)) * rng.uniform(0.1, 5, size=(n, 1))
    fast = soft_target_matrix(windows, tau)
    slow = np.array([naive_soft_targets(w, tau) for w in windows])
    err = float(np.abs(fast - slow).max())
    amp_err = 0.0
    j = np.arange(tau)
    for _ in range(20):
        A, phi = rng.uniform(0.1, 10), rng.uniform(0, 2 * np.pi)
        window = np.concatenate([[0.0], A * np.cos(2 * np.pi * j / tau + phi)])
        amp_err = max(amp_err, abs(soft_target_matrix(window, tau)[3] - A))
    return err <= 1e-12 and amp_err <= 1e-9, f"oracle diff {err:.1e}, amplitude error {amp_err:.1e}"


def check_residuals(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    model = ModelConfig(L=8, d=4, H=1, N_L=1, d1=4, head_hidden=(4, 4), tau=4)
    params = init_params(model, seed)
    # R3 on oracle concepts of an arbitrary series
    s = make_samples(rng.normal(size=60), 8, 4)
    r = residuals(s.targets_cur, s.targets_prev, s.y_prev, s.y_prev2, params)
    r3 = float(np.abs(r.R3.value).max())
    # constant series, beta = 0: all residuals vanish
    const = make_samples(np.full(30, 1.7), 8, 4)
    zero = dict(params, **{"physics.beta": np.zeros(6)})
    r = residuals(const.targets_cur, const.targets_prev, const.y_prev, const.y_prev2, zero)
    r_const = max(float(np.abs(v.value).max()) for v in r)
    # Ry along an exact unit-step trajectory
    beta = rng.normal(0, 0.2, size=6)
    g = 0.4
    drive = rng.normal(size=(41, 5))
    y = euler_ode_series(40, beta, g, drive)
    p = dict(params, **{"physics.beta": beta, "physics.gamma_raw": np.array(math.log(math.expm1(g)))})
    r = residuals(drive[3:41], drive[2:40], y[2:], y[1:-1], p)
    ry = float(np.abs(r.Ry.value).max())
    ok = r3 <= 1e-12 and r_const <= 1e-12 and ry <= 1e-10
    return ok, f"R3 {r3:.1e}, constant-series {r_const:.1e}, Euler Ry {ry:.1e}"


CHECKS = {
    "gradient": check_gradient,
    "causality": check_causality,
    "soft_targets": check_soft_targets,
    "residuals": check_residuals,
}


def run_selfcheck() -> int:
    failed = 0
    for name, fn in CHECKS.items():
        ok, detail = fn()
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if failed == 0 else 3
