import json
import re

import numpy as np
import pytest

from cpformer import cli
from cpformer.config import RunConfig, parse_config
from cpformer.errors import ConfigError
from cpformer.plotting import prediction_svg, write_prediction_csv

FAST = ["--L", "30", "--d", "4", "--H", "1", "--N_L", "1", "--d1", "4", "--head_h1", "4", "--head_h2", "4",
        "--epochs", "1", "--batch_size", "64"]


def outputs(tmp_path):
    return sorted(p.name for p in (tmp_path / "out").iterdir())


def artifact(tmp_path, command, suffix, seed=0):
    pattern = re.compile(rf"_{command}_s{seed}_[0-9a-f]{{10}}{re.escape(suffix)}$")
    (hit,) = [p for p in (tmp_path / "out").iterdir() if pattern.search(p.name)]
    return hit


def test_empty_config_gives_defaults(tmp_path):
    (tmp_path / "c.json").write_text("{}")
    cfg = parse_config(tmp_path / "c.json")
    assert (cfg.L, cfg.tau, cfg.d, cfg.H, cfg.N_L, cfg.d1, cfg.head_h1, cfg.head_h2) == (120, 25, 64, 4, 2, 32, 128, 64)
    assert cfg.lambda_1 == cfg.lambda_y == cfg.lambda_phys == cfg.lambda_con == 1.0
    assert cfg.epsilon == 1e-6


def test_flag_overrides_file(tmp_path):
    (tmp_path / "c.json").write_text('{"L": 120}')
    assert parse_config(tmp_path / "c.json", {"L": "8", "tau": "4"}).L == 8


@pytest.mark.parametrize("payload, key", [
    ('{"d": 65}', "d=65"),
    ('{"bogus": 1}', "bogus"),
    ('{"L": "long"}', "L"),
    ('{"L": 2.5}', "L"),
    ('{"ramp": "maybe"}', "ramp"),
    ('{"L": {"x": 1}}', "L"),
    ('[1, 2]', "flat"),
    ('{"L": 10}', "tau"),
])
def test_bad_configs_name_the_key(tmp_path, payload, key):
    (tmp_path / "c.json").write_text(payload)
    with pytest.raises(ConfigError, match=re.escape(key)):
        parse_config(tmp_path / "c.json")


def test_digest_ignores_output_dir():
    assert RunConfig(out_dir="a").digest() == RunConfig(out_dir="b").digest()
    assert RunConfig(seed=1).digest() != RunConfig(seed=2).digest()


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--d", "65"]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["eval", "--data", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("t,a\n0,1\n1,oops\n")
    assert cli.main(["concepts", "--data", str(bad)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("error: ") for line in err) and len(err) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(capsys):
    assert cli.main(["train", *FAST, "--lr", "1e6", "--clip_norm", "none"]) == 3
    assert "training aborted" in capsys.readouterr().err


def test_concepts_command(tmp_path, ili_csv, capsys):
    assert cli.main(["concepts", "--data", str(ili_csv), "--channel", "OT"]) == 0
    csv = artifact(tmp_path, "concepts", ".csv")
    assert csv.name.startswith("ili-weekly_OT_concepts_s0_")
    lines = csv.read_text().splitlines()
    assert lines[0] == "level,growth,power,amplitude,volatility"
    assert len(lines) == 1 + 160 - 26
    assert any(n.endswith(".config.json") for n in outputs(tmp_path))


def test_train_then_eval_reuses_checkpoint(tmp_path, ili_csv, capsys):
    args = ["--data", str(ili_csv), "--channel", "% WEIGHTED ILI", *FAST]
    assert cli.main(["train", *args]) == 0
    names = outputs(tmp_path)
    assert any(n.endswith(".cpf") for n in names) and any(n.endswith(".log.csv") for n in names)
    assert any(n.endswith(".png") for n in names)
    assert all(n.startswith("ili-weekly_WEIGHTED-ILI_train_s0_") for n in names)
    assert cli.main(["eval", *args, "--horizon", "3", "-v"]) == 0
    report = artifact(tmp_path, "eval", ".csv").read_text().splitlines()
    assert len(report) == 1 + 1 + 3


def test_eval_default_horizon_weekly_is_24(tmp_path, ili_csv):
    args = ["eval", "--data", str(ili_csv), *FAST, "--max_steps", "1"]
    assert cli.main(args) == 0
    report = artifact(tmp_path, "eval", ".csv").read_text().splitlines()
    assert report[-1].split(",")[2] == "h24"


def test_plot_from_dump(tmp_path):
    dump = tmp_path / "dump.csv"
    t = np.arange(10)
    write_prediction_csv(dump, t, np.sin(t), np.cos(t))
    assert cli.main(["plot", "--predictions", str(dump), "--L", "30"]) == 0
    svg = artifact(tmp_path, "plot", ".svg").read_text()
    assert svg.count("<polyline") == 2
    rows = artifact(tmp_path, "plot", ".csv").read_text().splitlines()
    assert rows[0] == "t,y_true,y_pred" and len(rows) == 11
    assert artifact(tmp_path, "plot", ".png").stat().st_size > 0


def test_svg_is_self_contained():
    svg = prediction_svg([0, 1, 2], [1.0, 2.0, 3.0], [1.0, 1.5, 2.5], "a <b>")
    assert svg.startswith("<svg") and "a &lt;b&gt;" in svg and "href" not in svg


def test_robustness_and_ablate_commands(tmp_path, capsys):
    common = ["--data", "synthetic:euler", "--standardize", "false", *FAST, "--max_steps", "2", "--n_seeds", "1"]
    assert cli.main(["robustness", *common]) == 0
    assert "mean concept KL" in capsys.readouterr().out
    assert cli.main(["ablate", *common]) == 0
    out = capsys.readouterr().out
    for v in ("full", "no_physics", "no_concept", "disjoint_heads"):
        assert v in out


def test_config_recorded_alongside(tmp_path):
    assert cli.main(["concepts", "--tau", "5", "--L", "8", "--seed", "3"]) == 0
    cfg_file = artifact(tmp_path, "concepts", ".config.json", seed=3)
    saved = json.loads(cfg_file.read_text())
    assert saved["tau"] == 5 and saved["seed"] == 3
    assert RunConfig(**saved).digest() in cfg_file.name


def test_selfcheck_command(capsys):
    assert cli.main(["selfcheck"]) == 0
    assert capsys.readouterr().out.count("PASS") == 4
