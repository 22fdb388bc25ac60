from pathlib import Path

import numpy as np
import pytest

from cpformer.data import make_samples
from cpformer.model import ModelConfig, init_params

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def ili_csv() -> Path:
    return DATA_DIR / "ili_weekly.csv"


@pytest.fixture
def tiny_model() -> ModelConfig:
    return ModelConfig(L=10, d=8, H=2, N_L=2, d1=6, head_hidden=(8, 6), tau=4)


@pytest.fixture
def tiny_setup(tiny_model):
    rng = np.random.default_rng(3)
    series = 2.0 + np.cumsum(rng.normal(0, 0.3, size=80))
    samples = make_samples(series, tiny_model.L, tiny_model.tau)
    params = init_params(tiny_model, 3)
    params["physics.beta"] = rng.normal(0, 0.3, size=6)
    params["physics.gamma_raw"] = np.array(0.2)
    return tiny_model, params, samples


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("CPF_OUT", str(tmp_path / "out"))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
