import json
import os

import numpy as np
import pytest

from eeopt.errors import ExperimentError
from eeopt.harness.checkpoint import load_checkpoint
from eeopt.harness.config import parse_config_text
from eeopt.harness.data import sine_mixture, write_csv
from eeopt.harness.experiment import build_task, repeat_last, run_experiment

FORECAST = """experiment = fc
task = forecast
data.length = 240
data.lookback = 12
data.horizon = 3
model.d = 8
model.d_m = 8
model.d_out = 8
model.patch_len = 4
model.batch_size = 32
optimizer.eta = 0.05
optimizer.beta = 0.99
optimizer.max_steps = 60
diag.every = 20
diag.spectrum_every = 30
"""


def cfg_of(text, **overrides):
    lines = text + "".join(f"{k} = {v}\n" for k, v in overrides.items())
    return parse_config_text(lines)


def test_outputs_written(tmp_path):
    out = tmp_path / "run"
    log = run_experiment(cfg_of(FORECAST), out)
    names = sorted(os.listdir(out))
    assert names == ["checkpoint.bin", "metrics.csv", "run.json", "spectrum_0.csv", "spectrum_30.csv", "spectrum_59.csv"]
    meta = json.loads((out / "run.json").read_text())
    assert meta["steps_run"] == 60 and meta["seed"] == 0
    assert meta["config"] == log.config_echo
    assert parse_config_text(meta["config"]) == cfg_of(FORECAST)
    np.testing.assert_array_equal(load_checkpoint(out / "checkpoint.bin"), log.params)
    rows = (out / "metrics.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["0", "20", "30", "40", "59"]
    assert set(log.metrics) == {"train", "val", "test"}
    assert set(log.baseline["test"]) == {"mse", "mae"}


def test_same_config_same_bytes(tmp_path):
    cfg = cfg_of(FORECAST)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("metrics.csv", "checkpoint.bin", "spectrum_59.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a = json.loads((tmp_path / "a" / "run.json").read_text())
    b = json.loads((tmp_path / "b" / "run.json").read_text())
    for d in (a, b):
        d.pop("started"), d.pop("finished")
    assert a == b


def test_seed_changes_run(tmp_path):
    a = run_experiment(cfg_of(FORECAST), False)
    b = run_experiment(cfg_of(FORECAST, seed=1), False)
    assert not np.array_equal(a.params, b.params)


def test_no_mechanisms_equals_plain_gd(tmp_path):
    ablated = cfg_of(FORECAST, ablation="none")
    plain = cfg_of(
        FORECAST.replace("optimizer.beta = 0.99\n", ""),
        **{"optimizer.rho": 0.0, "optimizer.negcur_kick": 0.0, "optimizer.temperature": 0.0, "optimizer.beta": 0.0},
    )
    run_experiment(ablated, tmp_path / "a")
    run_experiment(plain, tmp_path / "b")
    for name in ("metrics.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_test_split_does_not_leak(tmp_path):
    series = sine_mixture(240, 2, 0.1, seed=3)
    write_csv(tmp_path / "a.csv", series)
    mutated = series.copy()
    mutated[200:] += 100.0
    write_csv(tmp_path / "b.csv", mutated)
    logs = [run_experiment(cfg_of(FORECAST, **{"data.path": tmp_path / f"{n}.csv"}), tmp_path / n) for n in "ab"]
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert logs[0].metrics["train"] == logs[1].metrics["train"]
    assert logs[0].metrics["val"] == logs[1].metrics["val"]
    assert logs[0].metrics["test"] != logs[1].metrics["test"]


def test_saddle_escape():
    cfg = parse_config_text(
        "experiment = s\ntask = landscape\nlandscape.name = saddle\noptimizer.eta = 0.01\n"
        "optimizer.negcur_kick = 2.0\noptimizer.beta = 0.9\noptimizer.max_steps = 500\n"
    )
    log = run_experiment(cfg, False)
    assert log.escaped_count >= 1
    assert log.metrics["train"]["loss"] < -0.5


def test_repeat_last():
    X = np.arange(12.0).reshape(1, 2, 6)
    np.testing.assert_array_equal(repeat_last(X, 3), [[[5, 5, 5], [11, 11, 11]]])


def test_attention_task_builds():
    task = build_task(parse_config_text("experiment = a\ntask = attention_align\ndata.length = 300\n"))
    assert task.obj.dim == len(task.w0)
    Z, A = task.probe(task.w0)
    np.testing.assert_allclose(A.sum(axis=-1), 1.0)


def test_failure_leaves_nothing(tmp_path):
    cfg = parse_config_text("experiment = bad\ntask = landscape\nlandscape.start = 1,2,3\n")
    with pytest.raises(ExperimentError, match="landscape.start"):
        run_experiment(cfg, tmp_path / "out")
    assert os.listdir(tmp_path) == []


def test_refuses_foreign_directory(tmp_path):
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / "keep.txt").write_text("x")
    cfg = parse_config_text("experiment = q\ntask = landscape\nlandscape.name = quadratic\noptimizer.max_steps = 5\n")
    with pytest.raises(ExperimentError, match="not a previous run"):
        run_experiment(cfg, tmp_path / "out")
    assert sorted(os.listdir(tmp_path)) == ["out"]
    assert (tmp_path / "out" / "keep.txt").exists()
    run_experiment(cfg, tmp_path / "ok")
    run_experiment(cfg, tmp_path / "ok")  # a previous run directory is replaced
