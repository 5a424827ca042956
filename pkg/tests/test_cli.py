import csv

import numpy as np
import yaml

from driftwise.classifier import BayesSource, GaussianMixtureTask, HoldoutSet
from driftwise.cli import EXIT_CONFIG, EXIT_OK, main
from driftwise.shift import ShiftSchedule, generate_stream, write_stream
from driftwise.simplex import make_rng

CONFIG = {
    "task": {"n_classes": 3, "radius": 2.0},
    "holdout_size": 1000,
    "schedule": {"kind": "constant", "start": [0.6, 0.3, 0.1]},
    "adapters": [{"name": "bc"}, {"name": "ofc", "starts": 2, "iterations": 20}, {"name": "fth"}],
    "horizon": 200,
    "seeds": [0],
}


def write_config(tmp_path, raw=CONFIG):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_simulate(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["adapter"] for r in rows] == ["bc", "ofc", "fth"]


def test_bad_config_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, dict(CONFIG, horizon=-1))
    assert main(["simulate", "--config", str(path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_replay(tmp_path):
    task = GaussianMixtureTask.on_circle(n_classes=3, radius=2.0)
    src = BayesSource(task)
    HoldoutSet.draw(task, src, 800, make_rng(0)).to_csv(tmp_path / "holdout.csv")
    sched = ShiftSchedule.monotone([0.6, 0.3, 0.1], [0.1, 0.3, 0.6], 300)
    write_stream(tmp_path / "stream.csv", generate_stream(sched, task, src, make_rng(1)))
    out = tmp_path / "replay"
    code = main(
        ["replay", "--stream", str(tmp_path / "stream.csv"), "--holdout", str(tmp_path / "holdout.csv"),
         "--adapter", "ftfwh", "--window", "30", "--out", str(out)]
    )
    assert code == EXIT_OK
    with open(out / "summary.csv") as fh:
        names = [r["adapter"] for r in csv.DictReader(fh)]
    assert names == ["ftfwh-30", "ofc"]


def test_diagnose(tmp_path):
    out = tmp_path / "diag"
    code = main(["diagnose", "--config", str(write_config(tmp_path)), "--chords", "200", "--sym", "3", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "diagnostics.json").exists()
    assert (out / "diagnostics_hist.csv").read_text().startswith("series,bin_lo,bin_hi,count")


def test_sweep(tmp_path):
    out = tmp_path / "sweep"
    code = main(
        ["sweep", "--config", str(write_config(tmp_path)), "--param", "horizon", "--values", "50,100", "--out", str(out)]
    )
    assert code == EXIT_OK
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({r["value"] for r in rows}) == ["100", "50"]
    assert np.isfinite(float(rows[0]["avg_error"]))
