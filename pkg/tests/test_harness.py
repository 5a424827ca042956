import json

import numpy as np
import pytest

from driftwise.errors import ConfigError
from driftwise.harness.config import config_from_dict, load_config, parse_seeds, set_key
from driftwise.harness.output import emit_results, read_summary
from driftwise.harness.runner import PredictionFeed, build_world, run_experiment

SMALL = {
    "task": {"n_classes": 3, "radius": 2.0},
    "holdout_size": 1500,
    "calibration": True,
    "schedule": {"kind": "periodic", "start": [0.7, 0.2, 0.1], "end": [0.1, 0.2, 0.7], "period": 50},
    "adapters": [
        {"name": "bc"},
        {"name": "ofc", "starts": 3, "iterations": 30},
        {"name": "fth"},
        {"name": "ftfwh", "window": 50},
        {"name": "ogd", "lipschitz_dirs": 5},
    ],
    "horizon": 400,
    "seeds": [0, 1],
}


@pytest.fixture(scope="module")
def results():
    return run_experiment(config_from_dict(SMALL, env={}))


def test_records_and_labels(results):
    records, infos = results
    assert [r.adapter for r in records[:5]] == ["bc", "ofc", "fth", "ftfwh-50", "ogd"]
    assert len(records) == 10
    assert not any(r.faults for r in records)
    for r in records:
        assert r.errors.shape == (400,)
        assert r.regret == pytest.approx(r.avg_error - r.ofc_loss)
    assert all(info["label_accesses_by_adapters"] == 0 for info in infos)


def test_ofc_row_has_zero_regret(results):
    records, _ = results
    for r in records:
        if r.adapter == "ofc":
            assert r.regret == pytest.approx(0.0, abs=1e-15)


def test_feed_hides_labels():
    feed = PredictionFeed(np.eye(2))
    assert not hasattr(feed, "labels")
    with pytest.raises(AttributeError):
        feed.labels = np.zeros(2)


def test_world_seeds_differ():
    cfg = config_from_dict(SMALL, env={})
    a, b = build_world(cfg, 0), build_world(cfg, 1)
    assert not np.array_equal(a.holdout.labels, b.holdout.labels)


def test_emit_and_read_back(tmp_path, results):
    records, infos = results
    paths = emit_results(records, tmp_path / "out", {"x": 1}, infos)
    names = {p.name for p in paths}
    assert names == {"summary.csv", "aggregate.csv", "manifest.json", "per_step.csv"}
    rows = read_summary(tmp_path / "out" / "summary.csv")
    assert rows[0]["avg_error"] == records[0].avg_error
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"] == {"x": 1}
    lines = (tmp_path / "out" / "per_step.csv").read_text().splitlines()
    assert lines[0] == "t,adapter,seed,error,loss_estimate"
    assert len(lines) == 1 + 400 * 10
    assert not list(tmp_path.glob(".out.staging-*"))


def test_seed_override():
    cfg = config_from_dict(SMALL, env={"DRIFTWISE_SEED": "7,8"})
    assert list(cfg.seeds) == [7, 8]
    assert list(parse_seeds("3")) == [3]
    with pytest.raises(ConfigError):
        parse_seeds("a,b")


@pytest.mark.parametrize(
    "patch",
    [
        {"bogus": 1},
        {"adapters": []},
        {"adapters": [{"name": "magic"}]},
        {"adapters": [{"name": "ftfwh", "window": 0}]},
        {"adapters": [{"name": "ogd", "gradient": "newton"}]},
        {"adapters": [{"name": "bc"}, {"name": "bc"}]},
        {"horizon": 0},
        {"schedule": {"kind": "sawtooth"}},
        {"task": {"n_classes": 3, "source": "oracle"}},
    ],
)
def test_config_errors(patch):
    raw = dict(SMALL, **patch)
    with pytest.raises(ConfigError):
        config_from_dict(raw, env={})


def test_load_config_and_set_key(tmp_path):
    import yaml

    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    cfg = load_config(path, env={})
    assert cfg.horizon == 400
    raw = set_key(SMALL, "adapters.3.window", 20)
    assert raw["adapters"][3]["window"] == 20
    assert SMALL["adapters"][3]["window"] == 50
    with pytest.raises(ConfigError):
        set_key(SMALL, "nope.x", 1)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
