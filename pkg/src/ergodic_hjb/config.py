"""Experiment configuration: parsing, validation and defaults.

A config is a JSON object. Every section except ``model`` is optional::

    {
      "model": "radial_disk_2d",
      "grid": {"h": 0.0625},
      "discount": {"lambdas": [0.1]},
      "schedule": {"geometric": {"start": 0.1, "stop": 1e-4, "ratio": 0.5}},
      "simulation": {"dt": 0.001, "T": 5, "n_paths": 10000, "seed": 1, "x0": [0.5, 0]},
      "checks": [{"type": "lyapunov", "barrier": "neg_log_d", "delta": 0.1}],
      "output": "results/radial"
    }
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import build_model
from .problem import Barrier, ProblemSpec

TOP_LEVEL = ("name", "model", "grid", "discount", "schedule", "simulation", "checks",
             "output", "stages")
STAGES = ("validate", "lyapunov", "solve-discounted", "solve-ergodic", "liouville",
          "simulate", "exit-value", "report")
CHECK_TYPES = ("condition", "lyapunov", "liouville", "ergodic_constant", "uniqueness", "growth",
               "viability", "invariance", "mc_value", "exit_value")
# which stage produces the data a check needs
CHECK_STAGE = {"condition": "validate", "lyapunov": "lyapunov", "liouville": "liouville",
               "ergodic_constant": "solve-ergodic", "uniqueness": "solve-ergodic",
               "growth": "solve-ergodic", "viability": "simulate", "invariance": "simulate",
               "mc_value": "simulate", "exit_value": "exit-value"}


def _positive(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) \
            or value <= 0:
        raise ConfigError(key, f"must be a positive number, got {value!r}")
    return float(value)


def _point(key, value, dim):
    if not isinstance(value, (list, tuple)) or len(value) != dim \
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(key, f"must be a list of {dim} numbers")
    return [float(v) for v in value]


def _lambda_list(key, values):
    if not isinstance(values, list) or not values:
        raise ConfigError(key, "must be a nonempty list")
    out = [_positive(f"{key}[{i}]", v) for i, v in enumerate(values)]
    return out


@dataclass
class ExperimentConfig:
    model: object
    spec: ProblemSpec
    name: str = "experiment"
    grid: dict = field(default_factory=dict)
    discount: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    output: str = "results"
    stages: list = field(default_factory=list)

    def normalized(self) -> dict:
        """The validated config as plain JSON data (recorded in results.json)."""
        return {"name": self.name, "model": self.model, "grid": self.grid,
                "discount": self.discount, "schedule": self.schedule,
                "simulation": self.simulation, "checks": self.checks,
                "output": self.output, "stages": self.stages}

    def needs(self, stage: str) -> bool:
        return stage in self.stages


def _validate_grid(raw):
    if not isinstance(raw, dict) or "h" not in raw:
        raise ConfigError("grid.h", "grid needs a mesh width h")
    return {"h": _positive("grid.h", raw["h"])}


def _validate_discount(raw):
    if not isinstance(raw, dict):
        raise ConfigError("discount", "must be an object")
    if "lambdas" in raw:
        return {"lambdas": _lambda_list("discount.lambdas", raw["lambdas"])}
    if "lambda" in raw:
        return {"lambdas": [_positive("discount.lambda", raw["lambda"])]}
    raise ConfigError("discount.lambdas", "missing")


def _validate_schedule(raw, dim):
    if not isinstance(raw, dict):
        raise ConfigError("schedule", "must be an object")
    out = {}
    if "lambdas" in raw:
        lams = _lambda_list("schedule.lambdas", raw["lambdas"])
        if any(b >= a for a, b in zip(lams, lams[1:])):
            raise ConfigError("schedule.lambdas", "must be strictly decreasing")
        out["lambdas"] = lams
    else:
        geo = raw.get("geometric", {})
        if not isinstance(geo, dict):
            raise ConfigError("schedule.geometric", "must be an object")
        g = {"start": 1e-1, "stop": 1e-4, "ratio": 0.5}
        for k in geo:
            if k not in g:
                raise ConfigError(f"schedule.geometric.{k}", "unknown key")
            g[k] = _positive(f"schedule.geometric.{k}", geo[k])
        if not g["ratio"] < 1:
            raise ConfigError("schedule.geometric.ratio", "must lie in (0, 1)")
        if not g["stop"] < g["start"]:
            raise ConfigError("schedule.geometric.stop", "must be below start")
        out["geometric"] = g
    x_tilde = raw.get("x_tilde")
    out["x_tilde"] = None if x_tilde is None else _point("schedule.x_tilde", x_tilde, dim)
    ext = raw.get("extrapolation", "richardson")
    if ext not in ("richardson", "last"):
        raise ConfigError("schedule.extrapolation", "must be 'richardson' or 'last'")
    out["extrapolation"] = ext
    for k in raw:
        if k not in ("lambdas", "geometric", "x_tilde", "extrapolation"):
            raise ConfigError(f"schedule.{k}", "unknown key")
    return out


def _validate_simulation(raw, dim, n_controls):
    if not isinstance(raw, dict):
        raise ConfigError("simulation", "must be an object")
    known = ("dt", "T", "n_paths", "seed", "x0", "control_mode", "checkpoints")
    for k in raw:
        if k not in known:
            raise ConfigError(f"simulation.{k}", "unknown key")
    out = {"dt": _positive("simulation.dt", raw.get("dt", 1e-3)),
           "T": _positive("simulation.T", raw.get("T", 5.0))}
    if out["dt"] > out["T"]:
        raise ConfigError("simulation.dt", "must not exceed T")
    n = raw.get("n_paths", 10_000)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError("simulation.n_paths", "must be a positive integer")
    out["n_paths"] = n
    seed = raw.get("seed", 12345)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("simulation.seed", "must be an integer in [0, 2^64)")
    out["seed"] = seed
    out["x0"] = _point("simulation.x0", raw["x0"], dim) if "x0" in raw else None
    mode = raw.get("control_mode", "fixed:0")
    if not isinstance(mode, str):
        raise ConfigError("simulation.control_mode", "must be a string")
    if mode.startswith("fixed:"):
        try:
            idx = int(mode.split(":", 1)[1])
        except ValueError:
            raise ConfigError("simulation.control_mode", "fixed:<index> needs an integer") from None
        if not 0 <= idx < n_controls:
            raise ConfigError("simulation.control_mode", f"control index {idx} out of range")
    elif mode not in ("certifying", "grid_feedback", "random_switching", "boundary_seeking"):
        raise ConfigError("simulation.control_mode", f"unknown mode {mode!r}")
    out["control_mode"] = mode
    cps = raw.get("checkpoints", [])
    if not isinstance(cps, list):
        raise ConfigError("simulation.checkpoints", "must be a list of times")
    out["checkpoints"] = [float(t) for t in cps]
    return out


def _validate_check(i, raw, spec):
    key = f"checks[{i}]"
    if not isinstance(raw, dict):
        raise ConfigError(key, "must be an object")
    kind = raw.get("type")
    if kind not in CHECK_TYPES:
        raise ConfigError(f"{key}.type", f"unknown check type {kind!r}")
    check = dict(raw)
    expect = check.get("expect", True)
    if not isinstance(expect, bool):
        raise ConfigError(f"{key}.expect", "must be true or false")
    check["expect"] = expect
    if kind == "condition":
        from .conditions import CONDITIONS
        if check.get("name") not in CONDITIONS:
            raise ConfigError(f"{key}.name", f"must be one of {list(CONDITIONS)}")
    elif kind == "lyapunov":
        try:
            Barrier.parse(check.get("barrier", "neg_log_d"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}.barrier", str(exc)) from None
        check["delta"] = _positive(f"{key}.delta", check.get("delta", 0.1))
    elif kind in ("viability", "invariance", "mc_value", "exit_value"):
        if "x0" in check:
            check["x0"] = _point(f"{key}.x0", check["x0"], spec.dimension)
        if kind == "mc_value":
            check["lambda"] = _positive(f"{key}.lambda", check.get("lambda", 0.1))
    elif kind == "growth":
        deltas = check.get("deltas", [0.2, 0.1, 0.05])
        check["deltas"] = _lambda_list(f"{key}.deltas", deltas)
    elif kind == "uniqueness":
        if "schedule" in check:
            check["schedule"] = _validate_schedule(check["schedule"], spec.dimension)
    return check


def _default_stages(cfg: ExperimentConfig) -> list:
    wanted = {"validate"}
    if cfg.discount:
        wanted.add("solve-discounted")
    if cfg.schedule:
        wanted.add("solve-ergodic")
    if cfg.simulation:
        wanted.add("simulate")
    for c in cfg.checks:
        wanted.add(CHECK_STAGE[c["type"]])
    wanted.add("report")
    return [s for s in STAGES if s in wanted]


def validate_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Check a raw config object; raise ConfigError naming the offending key."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    for k in raw:
        if k not in TOP_LEVEL:
            raise ConfigError(k, "unknown top-level key")
    if "model" not in raw:
        raise ConfigError("model", "missing")
    try:
        spec = build_model(raw["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from None
    dim = spec.dimension
    cfg = ExperimentConfig(model=raw["model"], spec=spec, name=str(raw.get("name", spec.name)))
    if "grid" in raw:
        cfg.grid = _validate_grid(raw["grid"])
    if "discount" in raw:
        cfg.discount = _validate_discount(raw["discount"])
    if "schedule" in raw:
        cfg.schedule = _validate_schedule(raw["schedule"], dim)
    if "simulation" in raw:
        cfg.simulation = _validate_simulation(raw["simulation"], dim, len(spec.controls))
    checks = raw.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("checks", "must be a list")
    cfg.checks = [_validate_check(i, c, spec) for i, c in enumerate(checks)]
    out = raw.get("output", "results")
    if not isinstance(out, str) or not out:
        raise ConfigError("output", "must be a nonempty path")
    if base_dir is not None and not Path(out).is_absolute():
        out = str(Path(base_dir) / out)
    cfg.output = out
    stages = raw.get("stages")
    if stages is None:
        cfg.stages = _default_stages(cfg)
    else:
        if not isinstance(stages, list) or any(s not in STAGES for s in stages):
            raise ConfigError("stages", f"must be a list drawn from {list(STAGES)}")
        cfg.stages = [s for s in STAGES if s in stages]
    needs_grid = {"solve-discounted", "solve-ergodic", "liouville"} & set(cfg.stages)
    if needs_grid and not cfg.grid:
        raise ConfigError("grid", f"required by stage {sorted(needs_grid)[0]}")
    if "solve-discounted" in cfg.stages and not cfg.discount:
        raise ConfigError("discount", "required by stage solve-discounted")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return validate_config(raw)
