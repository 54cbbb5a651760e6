"""Stage runner behind the command line.

Each stage is a plain function ``stage(ctx) -> dict`` that records its
outcome in ``ctx.results`` and appends named check outcomes to
``ctx.checks``; the CLI only parses arguments and calls :func:`run_stages`.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sde
from .conditions import CONDITIONS, check_condition, lyapunov_margin
from .config import CHECK_STAGE, ExperimentConfig
from .discretize import assemble, build_grid
from .errors import ErgodicHJBError, MissingCost, StageError
from .models import terminal_from_config
from .problem import Barrier, sup_bound
from .solvers import (VanishingDiscountSchedule, boundary_growth_report, check_liouville,
                      check_uniqueness, solve_discounted, solve_ergodic)

SCHEMA = "1"
RESULTS_FILE = "results.json"


def jsonable(obj):
    """Convert numpy containers and scalars to plain JSON data; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass
class Context:
    config: ExperimentConfig
    output: Path
    threads: int = 1
    results: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    _grid: object = None
    _stencils: object = None
    discounted: dict = field(default_factory=dict)
    ergodic: object = None

    @property
    def spec(self):
        return self.config.spec

    def grid(self):
        if self._grid is None:
            self._grid = build_grid(self.spec.geom, self.config.grid["h"])
        return self._grid

    def stencils(self):
        if self._stencils is None:
            self._stencils = assemble(self.spec, self.grid())
        return self._stencils

    def x0(self, check=None):
        if check and check.get("x0") is not None:
            return check["x0"]
        sim = self.config.simulation
        if sim.get("x0") is not None:
            return sim["x0"]
        return self.spec.geom.centroid.tolist()

    def sim_config(self, mode=None):
        s = self.config.simulation or {}
        return sde.SimulationConfig(dt=s.get("dt", 1e-3), T=s.get("T", 5.0),
                                    n_paths=s.get("n_paths", 10_000), seed=s.get("seed", 12345),
                                    control_mode=0 if mode is None else mode)

    def record(self, name, check, passed, detail=None):
        expect = check.get("expect", True) if check else True
        self.checks.append({"name": name, "expected": expect, "outcome": bool(passed),
                            "passed": bool(passed) == expect,
                            **({"detail": detail} if detail is not None else {})})


def _checks_of(ctx, kind):
    return [(i, c) for i, c in enumerate(ctx.config.checks) if c["type"] == kind]


# --- stages ------------------------------------------------------------------------

def stage_validate(ctx: Context) -> dict:
    spec = ctx.spec
    out = {"model": {"name": spec.name, "geometry": spec.geom.to_dict(),
                     "controls": list(spec.controls.names),
                     "has_running_cost": spec.running_cost is not None,
                     "has_terminal_cost": spec.terminal_cost is not None},
           "conditions": {}}
    requested = _checks_of(ctx, "condition")
    params_known = spec.condition_params
    available = {"relevant": spec.terminal_cost is not None,
                 "invariance": "invariance" in params_known,
                 "irrelevant": bool({"irrelevant", "invariance"} & set(params_known))}
    names = [c["name"] for _, c in requested] or [n for n in CONDITIONS if available.get(n, True)]
    for name in dict.fromkeys(names):
        params = next((c.get("params") for _, c in requested if c["name"] == name), None)
        out["conditions"][name] = check_condition(spec, name, params).to_dict()
    for i, c in requested:
        rep = out["conditions"][c["name"]]
        ctx.record(f"condition:{c['name']}", c, rep["holds"])
    return out


def stage_lyapunov(ctx: Context) -> dict:
    out = {}
    requested = _checks_of(ctx, "lyapunov") or [
        (None, {"barrier": "neg_log_d", "delta": min(0.1, ctx.spec.geom.smoothness_radius)})]
    for i, c in requested:
        rep = lyapunov_margin(ctx.spec, c.get("barrier", "neg_log_d"), c["delta"],
                              c.get("M", 0.0), c.get("density", 64))
        label = Barrier.parse(c.get("barrier", "neg_log_d")).label
        out[label] = rep.to_dict()
        if i is not None:
            ctx.record(f"lyapunov:{label}", c, rep.passes)
    return out


def _discounted(ctx, lam):
    if lam not in ctx.discounted:
        ctx.discounted[lam] = solve_discounted(ctx.spec, ctx.grid(), lam, stencils=ctx.stencils())
    return ctx.discounted[lam]


def stage_solve_discounted(ctx: Context) -> dict:
    spec = ctx.spec
    if spec.running_cost is None:
        raise MissingCost(f"model {spec.name!r} has no running cost")
    bound = sup_bound(spec, "cost")
    rows = []
    ctx.output.mkdir(parents=True, exist_ok=True)
    for j, lam in enumerate(ctx.config.discount["lambdas"]):
        sol = _discounted(ctx, lam)
        u = sol.field.values
        fname = f"u_lambda_{j}.csv"
        sol.field.to_csv(ctx.output / fname, column="u")
        rows.append({"lambda": lam, "residual_sup": sol.residual_sup,
                     "iterations": sol.iterations, "min": float(u.min()), "max": float(u.max()),
                     "sup_bound": bound / lam,
                     "bound_holds": bool(np.all(np.abs(u) <= bound / lam * (1 + 1e-9))),
                     "value_at_x0": float(sol.field.at(ctx.x0())[0]), "x0": ctx.x0(),
                     "field_csv_path": fname})
    meta = ctx.grid().metadata()
    (ctx.output / "grid.json").write_text(json.dumps(jsonable(meta), indent=2, sort_keys=True) + "\n")
    return {"grid": meta, "solutions": rows}


def _schedule(raw):
    raw = raw or {}
    kw = {"x_tilde": raw.get("x_tilde"), "extrapolation": raw.get("extrapolation", "richardson")}
    if "lambdas" in raw:
        return VanishingDiscountSchedule(tuple(raw["lambdas"]), **kw)
    g = raw.get("geometric", {})
    return VanishingDiscountSchedule.geometric(g.get("start", 1e-1), g.get("stop", 1e-4),
                                               g.get("ratio", 0.5), **kw)


def _growth_deltas(ctx, wanted):
    r = ctx.spec.geom.smoothness_radius
    return [d for d in wanted if d <= r]


def stage_solve_ergodic(ctx: Context) -> dict:
    spec = ctx.spec
    if spec.running_cost is None:
        raise MissingCost(f"model {spec.name!r} has no running cost")
    sol = solve_ergodic(spec, ctx.grid(), _schedule(ctx.config.schedule), stencils=ctx.stencils())
    ctx.ergodic = sol
    ctx.output.mkdir(parents=True, exist_ok=True)
    sol.chi.to_csv(ctx.output / "chi.csv", column="chi")
    out = sol.to_dict()
    out["field_csv_path"] = "chi.csv"
    growth = _checks_of(ctx, "growth")
    deltas = _growth_deltas(ctx, growth[0][1]["deltas"] if growth else [0.2, 0.1, 0.05])
    try:
        out["growth_table"] = boundary_growth_report(sol.chi, reference_node=sol.reference_node,
                                                     deltas=deltas)
    except ErgodicHJBError as exc:
        out["growth_table"] = []
        out["growth_error"] = str(exc)
    for i, c in growth:
        ratios = [r["ratio"] for r in out["growth_table"]]
        ok = len(ratios) >= 2 and all(b < a for a, b in zip(ratios, ratios[1:]))
        ctx.record("growth", c, ok, {"ratios": ratios})
    for i, c in _checks_of(ctx, "ergodic_constant"):
        tol = c.get("tol", 1e-6)
        ok = abs(sol.c - c["expected"]) <= tol
        ctx.record("ergodic_constant", c, ok, {"c": sol.c, "expected": c["expected"], "tol": tol})
    for i, c in _checks_of(ctx, "uniqueness"):
        other_raw = c.get("schedule") or {"geometric": {"start": 1e-1, "stop": 1e-4, "ratio": 1 / 3}}
        other = solve_ergodic(spec, ctx.grid(), _schedule(other_raw), stencils=ctx.stencils())
        rep = check_uniqueness(sol, other, c.get("tol", 1e-3))
        out["uniqueness"] = {**rep.to_dict(), "c_other": other.c}
        ctx.record("uniqueness", c, rep.passes, rep.to_dict())
    return out


def stage_liouville(ctx: Context) -> dict:
    requested = _checks_of(ctx, "liouville")
    c = requested[0][1] if requested else {}
    rep = check_liouville(ctx.spec, ctx.grid(), tol=c.get("tol", 1e-6), params=c.get("params"),
                          schedule=_schedule(ctx.config.schedule) if ctx.config.schedule else None)
    for i, c in requested:
        ctx.record("liouville", c, rep.status == "pass",
                   {"status": rep.status, "max_deviation": rep.max_deviation})
    return rep.to_dict()


def _control_mode(ctx, name):
    spec = ctx.spec
    if name.startswith("fixed:"):
        return int(name.split(":", 1)[1])
    if name == "certifying":
        return sde.StateFeedback(check_condition(spec, "irrelevant").feedback(), "certifying")
    if name == "grid_feedback":
        lam = (ctx.config.discount.get("lambdas") or [0.1])[0]
        return _discounted(ctx, lam).policy
    if name == "random_switching":
        return sde.RandomSwitching()
    return sde.BoundarySeeking()


def stage_simulate(ctx: Context) -> dict:
    spec = ctx.spec
    sim = ctx.config.simulation or {}
    out = {}
    if "dt" in sim:  # an explicit simulation section, not just a --seed override
        mode = _control_mode(ctx, sim.get("control_mode", "fixed:0"))
        batch = sde.simulate(spec, ctx.x0(), ctx.sim_config(mode),
                             checkpoints=sim.get("checkpoints") or None)
        out["batch"] = batch.summary()
        if batch.checkpoints is not None:
            ctx.output.mkdir(parents=True, exist_ok=True)
            batch.checkpoints_to_csv(ctx.output / "paths.csv")
            out["batch"]["paths_csv"] = "paths.csv"
    for i, c in _checks_of(ctx, "viability"):
        fb = _control_mode(ctx, c["feedback"]) if "feedback" in c else None
        rep = sde.check_viability(spec, ctx.x0(c), ctx.sim_config(), fb, c.get("params"),
                                  c.get("threshold", sde.DEFAULT_THRESHOLD))
        out.setdefault("viability", []).append(rep.to_dict())
        ctx.record("viability", c, rep.passes, {"status": rep.status})
    for i, c in _checks_of(ctx, "invariance"):
        rep = sde.check_invariance(spec, ctx.x0(c), ctx.sim_config(), None, c.get("params"),
                                   c.get("threshold", sde.DEFAULT_THRESHOLD))
        out.setdefault("invariance", []).append(rep.to_dict())
        ctx.record("invariance_mc", c, rep.passes, {"status": rep.status})
    for i, c in _checks_of(ctx, "mc_value"):
        lam = c["lambda"]
        pde = _discounted(ctx, lam)
        x0 = ctx.x0(c)
        mc = sde.mc_discounted_value(spec, x0, lam, ctx.sim_config(pde.policy),
                                     tol=c.get("budget", 2e-2))
        u = float(pde.field.at(x0)[0])
        gap = abs(mc.estimate - u)
        allowed = 3 * mc.std_error + c.get("budget", 2e-2)
        row = {**mc.to_dict(), "lambda": lam, "x0": x0, "pde_value": u, "gap": gap,
               "allowed": allowed}
        out.setdefault("mc_value", []).append(row)
        ctx.record("mc_value", c, gap <= allowed, {"gap": gap, "allowed": allowed})
    return out


def stage_exit_value(ctx: Context) -> dict:
    spec = ctx.spec
    rows = []
    requested = _checks_of(ctx, "exit_value") or [(None, {})]
    for i, c in requested:
        phi = terminal_from_config(c["phi"]) if "phi" in c else None
        rep = sde.exit_value(spec, phi, ctx.x0(c), config=ctx.sim_config())
        row = rep.to_dict()
        rows.append(row)
        if i is None:
            continue
        if rep.status != "ok":
            ctx.record(f"exit_value[{i}]", c, False, {"status": rep.status})
            continue
        lo, hi = c.get("band", [rep.theorem_value - 0.1, rep.theorem_value + 0.1])
        ok = lo <= rep.estimate <= hi
        if rep.theorem_value == 0.0:
            ok = ok and rep.nonexit["exit_fraction"] < c.get("threshold", sde.DEFAULT_THRESHOLD)
        ctx.record(f"exit_value[{i}]", c, ok, {"estimate": rep.estimate, "band": [lo, hi],
                                         "theorem_value": rep.theorem_value})
    return {"runs": rows}


def stage_report(ctx: Context) -> dict:
    from .plotting import render_report
    return {"files": render_report(ctx.results, ctx.output)}


STAGE_FUNCS = {
    "validate": stage_validate,
    "lyapunov": stage_lyapunov,
    "solve-discounted": stage_solve_discounted,
    "solve-ergodic": stage_solve_ergodic,
    "liouville": stage_liouville,
    "simulate": stage_simulate,
    "exit-value": stage_exit_value,
    "report": stage_report,
}


def run_stages(config: ExperimentConfig, stages=None, output=None, threads: int = 1,
               timestamp: str | None = None) -> tuple[dict, bool]:
    """Execute ``stages`` (default: the config's) in dependency order and write results.json.

    Returns the results and whether every requested check passed.
    """
    stages = list(config.stages if stages is None else stages)
    order = [s for s in STAGE_FUNCS if s in stages]
    out_dir = Path(output or config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(config, out_dir, threads)
    ctx.results = {"schema": SCHEMA, "config": jsonable(config.normalized()),
                   "stages": order, "threads": threads}
    for stage in order:
        if stage == "report":
            continue
        try:
            ctx.results[stage.replace("-", "_")] = jsonable(STAGE_FUNCS[stage](ctx))
        except (ErgodicHJBError, ValueError) as exc:
            raise StageError(stage, exc) from exc
    executed = set(order)
    ctx.results["checks"] = jsonable(ctx.checks)
    skipped = [c["type"] for c in config.checks if CHECK_STAGE[c["type"]] not in executed]
    ctx.results["checks_skipped"] = skipped
    passed = all(c["passed"] for c in ctx.checks)
    ctx.results["all_passed"] = passed
    ctx.results["timestamp"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()
    write_results(ctx.results, out_dir)
    if "report" in order:
        try:
            ctx.results["report"] = stage_report(ctx)
        except ErgodicHJBError as exc:
            raise StageError("report", exc) from exc
    return ctx.results, passed


def write_results(results: dict, out_dir) -> Path:
    path = Path(out_dir) / RESULTS_FILE
    path.write_text(json.dumps(jsonable(results), indent=2, sort_keys=True) + "\n")
    return path


def read_results(out_dir) -> dict:
    return json.loads((Path(out_dir) / RESULTS_FILE).read_text())
