"""Experiment configuration: YAML schema, validation and defaults.

Example::

    task:
      n_classes: 10
      dim: 2
      variance: 1.0
      radius: 5.2
      source: bayes          # bayes | sharpened
    holdout_size: 20000
    calibration: true
    schedule:
      kind: monotone
      start: {dominant: 3, mass: 0.55}
      end: {dominant: 4, mass: 0.55}
    adapters:
      - name: bc
      - name: ofc
      - name: fth
      - name: ftfwh
        window: 1000
      - name: ogd
        gradient: surrogate
    horizon: 100000
    seeds: [0, 1, 2]
    output:
      dir: results

Replay mode sets ``task.holdout`` and ``schedule.stream`` to CSV paths instead
of simulating.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..adaptation import OgdConfig
from ..classifier import DEFAULT_RADIUS, GaussianMixtureTask
from ..errors import ConfigError, DriftwiseError
from ..estimation import FiniteDiffConfig
from ..shift import SCHEDULE_KINDS, ShiftSchedule, concentrated

SEED_ENV = "DRIFTWISE_SEED"

TOP_KEYS = {"task", "holdout_size", "calibration", "schedule", "adapters", "horizon", "seeds", "output"}
TASK_KEYS = {"n_classes", "dim", "variance", "radius", "prior", "source", "sharpen_power", "holdout"}
SCHEDULE_KEYS = {"kind", "start", "end", "period", "growth", "stream"}
OUTPUT_KEYS = {"dir", "per_step", "loss_estimates"}
ADAPTER_KEYS = {
    "bc": {"name", "label"},
    "ofc": {"name", "label", "starts", "iterations", "step", "reference", "loss", "eval_stride"},
    "fth": {"name", "label"},
    "ftfwh": {"name", "label", "window"},
    "ogd": {"name", "label", "gradient", "lr", "fd", "lipschitz_dirs", "lipschitz"},
}
FD_KEYS = {"step", "order", "smoothing_count", "smoothing_radius"}
SOURCES = ("bayes", "sharpened")


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


@dataclass(frozen=True)
class TaskConfig:
    n_classes: int = 10
    dim: int = 2
    variance: float = 1.0
    radius: float = DEFAULT_RADIUS
    prior: tuple | None = None
    source: str = "bayes"
    sharpen_power: float = 2.0
    holdout: str | None = None

    def build(self):
        return GaussianMixtureTask.on_circle(self.n_classes, self.dim, self.radius, self.variance, self.prior)


@dataclass(frozen=True)
class AdapterSpec:
    name: str
    label: str
    options: dict = field(default_factory=dict)

    def ogd_config(self, horizon):
        o = self.options
        fd = FiniteDiffConfig(**o.get("fd", {}))
        return OgdConfig(
            horizon=horizon,
            lr=o.get("lr"),
            gradient=o.get("gradient", "surrogate"),
            fd=fd,
            lipschitz_dirs=int(o.get("lipschitz_dirs", 100)),
        )


@dataclass(frozen=True)
class OfcSettings:
    starts: int = 10
    iterations: int = 500
    step: float = 0.1
    reference: str = "realized"
    loss: str = "zero-one"
    eval_stride: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig
    holdout_size: int
    calibration: bool
    schedule: dict
    adapters: tuple
    horizon: int
    seeds: tuple
    output: dict
    base_dir: str = "."

    @property
    def replay(self):
        return "stream" in self.schedule

    @property
    def ofc(self):
        for a in self.adapters:
            if a.name == "ofc":
                o = {k: v for k, v in a.options.items()}
                return OfcSettings(**o)
        return OfcSettings()

    @property
    def emits_ofc(self):
        return any(a.name == "ofc" for a in self.adapters)

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def build_schedule(self, horizon=None):
        s = self.schedule
        m = self.task.n_classes
        T = self.horizon if horizon is None else horizon
        start = _marginal(s.get("start"), m, "schedule.start")
        kind = s["kind"]
        if kind == "constant":
            return ShiftSchedule.constant(start, T)
        end = _marginal(s.get("end"), m, "schedule.end")
        if kind == "monotone":
            return ShiftSchedule.monotone(start, end, T)
        if kind == "periodic":
            return ShiftSchedule.periodic(start, end, s.get("period", 1000), T)
        return ShiftSchedule.exp_periodic(start, end, s.get("growth", 2), T)

    def to_dict(self):
        task = {k: getattr(self.task, k) for k in TaskConfig.__dataclass_fields__}
        if task["prior"] is not None:
            task["prior"] = list(task["prior"])
        return {
            "task": task,
            "holdout_size": self.holdout_size,
            "calibration": self.calibration,
            "schedule": copy.deepcopy(self.schedule),
            "adapters": [dict(name=a.name, label=a.label, **copy.deepcopy(a.options)) for a in self.adapters],
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "output": dict(self.output),
        }


def _marginal(spec, m, where):
    if spec is None:
        raise ConfigError(f"{where} is required")
    if isinstance(spec, dict):
        _check_keys(spec, {"dominant", "mass"}, where)
        try:
            return concentrated(m, int(spec["dominant"]), float(spec.get("mass", 0.55)))
        except (KeyError, DriftwiseError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    q = np.asarray(spec, dtype=float)
    if q.shape != (m,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-6:
        raise ConfigError(f"{where} must be a probability vector of length {m}")
    return q


def parse_seeds(text):
    try:
        seeds = [int(s) for s in str(text).replace(" ", "").split(",") if s != ""]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"bad seed list {text!r}")
    return tuple(seeds)


def _default_label(name, opts):
    if name == "ftfwh":
        return f"ftfwh-{opts.get('window')}"
    if name == "ogd":
        return "ogd-fd" if opts.get("gradient") == "finite-diff" else "ogd"
    return name


def _adapter(raw, n):
    where = f"adapters[{n}]"
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError(f"{where} needs a name")
    name = raw["name"]
    if name not in ADAPTER_KEYS:
        raise ConfigError(f"{where}: unknown adapter {name!r} (choose from {', '.join(ADAPTER_KEYS)})")
    _check_keys(raw, ADAPTER_KEYS[name], where)
    opts = {k: v for k, v in raw.items() if k not in ("name", "label")}
    if name == "ftfwh":
        w = opts.get("window")
        if not isinstance(w, int) or w < 1:
            raise ConfigError(f"{where}: window must be an integer >= 1")
    if name == "ogd":
        if opts.get("gradient", "surrogate") not in ("surrogate", "finite-diff"):
            raise ConfigError(f"{where}: gradient must be surrogate or finite-diff")
        if "lr" in opts and opts["lr"] is not None and not float(opts["lr"]) > 0:
            raise ConfigError(f"{where}: lr must be positive")
        if "fd" in opts:
            _check_keys(opts["fd"], FD_KEYS, f"{where}.fd")
            try:
                FiniteDiffConfig(**opts["fd"])
            except DriftwiseError as exc:
                raise ConfigError(f"{where}.fd: {exc}") from None
    if name == "ofc":
        if opts.get("reference", "realized") not in ("realized", "exact"):
            raise ConfigError(f"{where}: reference must be realized or exact")
        if opts.get("loss", "zero-one") not in ("zero-one", "surrogate"):
            raise ConfigError(f"{where}: loss must be zero-one or surrogate")
        try:
            OfcSettings(**opts)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return AdapterSpec(name, str(raw.get("label", _default_label(name, opts))), opts)


def config_from_dict(raw, base_dir=".", env=None):
    """Validate a parsed YAML mapping. ``env`` defaults to ``os.environ``."""
    env = os.environ if env is None else env
    _check_keys(raw, TOP_KEYS, "config")
    task_raw = raw.get("task", {}) or {}
    _check_keys(task_raw, TASK_KEYS, "task")
    try:
        task = TaskConfig(**task_raw)
    except TypeError as exc:
        raise ConfigError(f"task: {exc}") from None
    if task.n_classes < 1 or task.dim < 1 or not task.variance > 0:
        raise ConfigError("task: n_classes, dim and variance must be positive")
    if task.source not in SOURCES:
        raise ConfigError(f"task.source must be one of {SOURCES}")
    if task.prior is not None:
        object.__setattr__(task, "prior", tuple(_marginal(list(task.prior), task.n_classes, "task.prior")))

    schedule = dict(raw.get("schedule") or {})
    _check_keys(schedule, SCHEDULE_KEYS, "schedule")
    if "stream" not in schedule:
        if schedule.get("kind") not in SCHEDULE_KINDS[:-1]:
            raise ConfigError(f"schedule.kind must be one of {', '.join(SCHEDULE_KINDS[:-1])}")
    adapters_raw = raw.get("adapters") or []
    if not adapters_raw:
        raise ConfigError("at least one adapter is required")
    adapters = tuple(_adapter(a, n) for n, a in enumerate(adapters_raw))
    labels = [a.label for a in adapters]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"adapter labels must be unique: {labels}")

    horizon = raw.get("horizon", 100_000)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon must be an integer >= 1")
    holdout_size = raw.get("holdout_size", 20_000)
    if not isinstance(holdout_size, int) or holdout_size < 2:
        raise ConfigError("holdout_size must be an integer >= 2")
    if env.get(SEED_ENV):
        seeds = parse_seeds(env[SEED_ENV])
    else:
        seeds = raw.get("seeds", [0, 1, 2])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds must be a non-empty list")
        seeds = parse_seeds(",".join(str(s) for s in seeds))
    output = {"dir": "results", "per_step": True, "loss_estimates": False}
    out_raw = raw.get("output") or {}
    _check_keys(out_raw, OUTPUT_KEYS, "output")
    output.update(out_raw)

    cfg = ExperimentConfig(
        task=task,
        holdout_size=holdout_size,
        calibration=bool(raw.get("calibration", False)),
        schedule=schedule,
        adapters=adapters,
        horizon=horizon,
        seeds=seeds,
        output=output,
        base_dir=str(base_dir),
    )
    for key in ("holdout",):
        if getattr(task, key) is not None and not cfg.resolve_path(getattr(task, key)).is_file():
            raise ConfigError(f"task.{key}: file not found: {getattr(task, key)}")
    if "stream" in schedule:
        if not cfg.resolve_path(schedule["stream"]).is_file():
            raise ConfigError(f"schedule.stream: file not found: {schedule['stream']}")
        if task.holdout is None:
            raise ConfigError("replay needs task.holdout")
    else:
        try:
            cfg.build_schedule()
        except DriftwiseError as exc:
            raise ConfigError(f"schedule: {exc}") from None
    return cfg


def load_config(path, env=None):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is None:
        raw = {}
    return config_from_dict(raw, base_dir=path.parent, env=env)


def set_key(raw, dotted, value):
    """Return a copy of ``raw`` with ``a.b.c`` set to ``value`` (list indices allowed)."""
    out = copy.deepcopy(raw)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        key = int(part) if isinstance(node, list) else part
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"no such config key {dotted!r}") from None
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError(f"no such config key {dotted!r}")
    return out
