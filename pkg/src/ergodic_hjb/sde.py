"""Euler-Maruyama simulation of the controlled diffusion and Monte Carlo checks.

Dynamics: ``dX = b(X, alpha) dt + sqrt(2) sigma(X, alpha) dW``. A path exits at
the first step endpoint with ``d(X) <= 0``; it is then frozen at the boundary
projection of that endpoint. No Brownian-bridge correction is applied, which
can only over-count exits.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import rng
from .conditions import check_condition
from .discretize import FeedbackPolicy
from .errors import BadStart, MissingCost
from .problem import ProblemSpec, sup_bound

DEFAULT_THRESHOLD = 1e-3
COMPACT_BELOW = 0.6   # live fraction under which steps run on the live subset only


# --- control modes ---------------------------------------------------------------

class ControlMode:
    label = "mode"

    def choose(self, spec: ProblemSpec, x: np.ndarray, paths: np.ndarray, step: int) -> np.ndarray:
        raise NotImplementedError


@dataclass
class FixedControl(ControlMode):
    index: int

    @property
    def label(self):
        return f"fixed[{self.index}]"

    def choose(self, spec, x, paths, step):
        return np.full(x.shape[0], self.index, dtype=int)


@dataclass
class StateFeedback(ControlMode):
    """Wraps any ``x -> control indices`` callable, including grid policies."""

    fn: object
    label: str = "feedback"

    def choose(self, spec, x, paths, step):
        return np.asarray(self.fn(x), dtype=int).reshape(x.shape[0])


@dataclass
class PerPathControls(ControlMode):
    indices: np.ndarray
    label: str = "per_path"

    def choose(self, spec, x, paths, step):
        return np.asarray(self.indices, dtype=int)[paths]


@dataclass
class RandomSwitching(ControlMode):
    """Uniformly random control per path, redrawn every ``hold_steps`` steps."""

    hold_steps: int = 50
    seed: int = 7919
    label: str = "random_switching"

    def choose(self, spec, x, paths, step):
        K = len(spec.controls)
        u = rng.uniforms(self.seed, step // self.hold_steps, int(paths.max()) + 1)[paths]
        return np.minimum((u * K).astype(int), K - 1)


def _escape_scores(spec, x):
    """Per control, F applied to -log d: smaller means the control drives toward the boundary."""
    d, Dd, D2d = geo.distance_jet(spec.geom, x)
    d = np.atleast_1d(d)
    Dd = Dd.reshape(d.size, -1)
    D2d = D2d.reshape(d.size, Dd.shape[1], Dd.shape[1])
    scores = np.empty((len(spec.controls), d.size))
    for k in range(len(spec.controls)):
        b, s = spec.b(x, k), spec.sigma(x, k)
        inward = np.einsum("ni,ni->n", b, Dd) + np.einsum("nik,njk,nji->n", s, s, D2d)
        normal = np.sum(np.einsum("nik,ni->nk", s, Dd) ** 2, axis=1)
        scores[k] = inward / d - normal / d**2
    return scores


@dataclass
class BoundarySeeking(ControlMode):
    """Adversarial heuristic: in the collar pick the control that pushes hardest outward."""

    label: str = "boundary_seeking"

    def choose(self, spec, x, paths, step):
        out = np.zeros(x.shape[0], dtype=int)
        d = np.atleast_1d(geo.signed_distance(spec.geom, x))
        inside = (d > 0) & (d < spec.geom.smoothness_radius)
        if spec.geom.shape in ("ball", "annulus"):
            r = np.linalg.norm(x - spec.geom.centroid, axis=1)
            inside &= r > 1e-9
        if np.any(inside):
            out[inside] = np.argmin(_escape_scores(spec, x[inside]), axis=0)
        return out


@dataclass
class ExitSeeking(ControlMode):
    """Witness policy steering exits toward a boundary target.

    Inside a cone around the ray from the domain centroid to ``target`` the
    ``seek`` control is used; elsewhere the ``hold`` mode keeps the path in the
    domain. The cone half-angle shrinks linearly from ``outer_angle`` at the
    centroid to ``inner_angle`` at the boundary, which confines exits to an
    arc of half-angle ``inner_angle`` around the target.
    """

    target: np.ndarray
    seek: int
    hold: ControlMode
    inner_angle: float = 0.25
    outer_angle: float = 1.6
    label: str = "exit_seeking"

    def choose(self, spec, x, paths, step):
        c0 = spec.geom.centroid
        e = np.asarray(self.target, dtype=float) - c0
        e = e / np.linalg.norm(e)
        v = x - c0
        r = np.sqrt(np.einsum("ij,ij->i", v, v))
        depth = np.clip(np.atleast_1d(geo.signed_distance(spec.geom, x))
                        / float(geo.signed_distance(spec.geom, c0)), 0.0, 1.0)
        half = self.inner_angle + (self.outer_angle - self.inner_angle) * depth
        # angle(v, e) < half  <=>  v.e > |v| cos(half), since half lies in (0, pi)
        seek = (v @ e) > r * np.cos(half)
        out = self.hold.choose(spec, x, paths, step)
        return np.where(seek, self.seek, out)


def as_mode(mode) -> ControlMode:
    if isinstance(mode, ControlMode):
        return mode
    if isinstance(mode, (int, np.integer)):
        return FixedControl(int(mode))
    if isinstance(mode, FeedbackPolicy):
        return StateFeedback(mode, "grid_feedback")
    if callable(mode):
        return StateFeedback(mode)
    return PerPathControls(np.asarray(mode, dtype=int))


# --- simulation ------------------------------------------------------------------

@dataclass
class SimulationConfig:
    dt: float = 1e-3
    T: float = 5.0
    n_paths: int = 10_000
    seed: int = 12345
    control_mode: object = 0

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **kw) -> "SimulationConfig":
        vals = dict(self.__dict__)
        vals.update(kw)
        return SimulationConfig(**vals)


@dataclass
class TrajectoryBatch:
    x0: np.ndarray
    exited: np.ndarray
    exit_time: np.ndarray
    exit_position: np.ndarray
    final_position: np.ndarray
    dt: float
    T: float
    seed: int
    mode: str
    checkpoint_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    checkpoints: np.ndarray | None = None
    discounted_cost: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.exited.size

    def summary(self) -> dict:
        stats = exit_statistics(self)
        return {"x0": self.x0.tolist(), "dt": self.dt, "T": self.T, "seed": self.seed,
                "mode": self.mode, "n_paths": self.n_paths, **stats.to_dict()}

    def checkpoints_to_csv(self, path) -> Path:
        if self.checkpoints is None:
            raise ValueError("batch was simulated without checkpoints")
        path = Path(path)
        n = self.x0.size
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t"] + ["x", "y", "z"][:n])
            for j, t in enumerate(self.checkpoint_times):
                for i in range(self.n_paths):
                    w.writerow([i, f"{t:.12g}"] + [f"{v:.12g}" for v in self.checkpoints[j, i]])
        return path


def _apply_sigma(sig, xi):
    # column sum beats a batched matmul for the tiny per-path matrices used here
    out = sig[:, :, 0] * xi[:, 0, None]
    for j in range(1, xi.shape[1]):
        out += sig[:, :, j] * xi[:, j, None]
    return out


def _run(spec, x0, config, mode, lam=None, checkpoints=None, n_steps=None):
    x0 = np.asarray(x0, dtype=float).reshape(spec.dimension)
    if geo.signed_distance(spec.geom, x0) <= 0:
        raise BadStart(f"start point {x0.tolist()} is not interior")
    mode = as_mode(mode)
    N, n, dt = config.n_paths, spec.dimension, config.dt
    steps = config.n_steps if n_steps is None else n_steps
    X = np.tile(x0, (N, 1))
    alive = np.ones(N, dtype=bool)
    exit_time = np.full(N, np.inf)
    exit_pos = np.full((N, n), np.nan)
    acc = np.zeros(N) if lam is not None else None
    ck_steps = []
    if checkpoints is not None:
        ck_steps = sorted({min(steps, int(round(t / dt))) for t in checkpoints})
    ck = np.empty((len(ck_steps), N, n))
    ck_map = {s: j for j, s in enumerate(ck_steps)}
    if 0 in ck_map:
        ck[ck_map[0]] = X
    noise_dim = spec.sigma(x0[None], 0).shape[2]
    sqrt_2dt = math.sqrt(2.0 * dt)
    if lam is not None:
        step_weight = (1.0 - math.exp(-lam * dt)) / lam
    paths = np.arange(N)
    for s in range(steps):
        if not alive.any():
            # everything has exited: remaining checkpoints see the frozen state
            for t, j in ck_map.items():
                if t > s:
                    ck[j] = X
            break
        # while most paths are alive every array is stepped in full (exited ones
        # are frozen afterwards); once many have exited, only live rows are touched
        xi = rng.normals(config.seed, s, N, noise_dim)
        sub = None if alive.mean() > COMPACT_BELOW else np.flatnonzero(alive)
        Xs = X if sub is None else X[sub]
        xs = xi if sub is None else xi[sub]
        ctl = mode.choose(spec, Xs, paths if sub is None else sub, s)
        ks = np.flatnonzero(np.bincount(ctl, minlength=len(spec.controls)))
        if ks.size == 1:
            k = int(ks[0])
            incr = spec.b(Xs, k) * dt + sqrt_2dt * _apply_sigma(spec.sigma(Xs, k), xs)
            cost = spec.cost(Xs, k) if acc is not None else None
        else:
            # blend by 0/1 weights: cheaper than masked gathers at this size
            incr = np.zeros_like(Xs)
            cost = np.zeros(Xs.shape[0]) if acc is not None else None
            for k in ks:
                w = (ctl == k).astype(float)
                incr += w[:, None] * (spec.b(Xs, int(k)) * dt
                                      + sqrt_2dt * _apply_sigma(spec.sigma(Xs, int(k)), xs))
                if acc is not None:
                    cost += w * spec.cost(Xs, int(k))
        disc = math.exp(-lam * s * dt) * step_weight if acc is not None else 0.0
        if sub is None:
            live = alive.astype(float)
            if acc is not None:
                acc += disc * live * cost
            xn = X + live[:, None] * incr
            out = alive & (np.atleast_1d(geo.signed_distance(spec.geom, xn)) <= 0)
        else:
            if acc is not None:
                acc[sub] += disc * cost
            xn = X.copy()
            xn[sub] += incr
            out = np.zeros(N, dtype=bool)
            out[sub] = np.atleast_1d(geo.signed_distance(spec.geom, xn[sub])) <= 0
        if np.any(out):
            alive &= ~out
            exit_time[out] = (s + 1) * dt
            exit_pos[out] = geo.project_to_boundary(spec.geom, xn[out]).reshape(-1, n)
            xn[out] = exit_pos[out]
        X = xn
        if s + 1 in ck_map:
            ck[ck_map[s + 1]] = X
    batch = TrajectoryBatch(
        x0=x0, exited=~alive, exit_time=np.where(alive, steps * dt, exit_time),
        exit_position=exit_pos, final_position=X, dt=dt, T=steps * dt, seed=config.seed,
        mode=mode.label, checkpoint_times=np.asarray(ck_steps, dtype=float) * dt,
        checkpoints=ck if checkpoints is not None else None, discounted_cost=acc)
    return batch


def simulate(spec: ProblemSpec, x0, config: SimulationConfig, checkpoints=None) -> TrajectoryBatch:
    """Euler-Maruyama ensemble from ``x0`` under ``config.control_mode``."""
    return _run(spec, x0, config, config.control_mode, checkpoints=checkpoints)


@dataclass
class ExitStatistics:
    exit_fraction: float
    std_error: float
    mean_exit_time_given_exit: float | None
    exit_position_histogram: dict
    n_paths: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def exit_statistics(batch: TrajectoryBatch, bins: int = 16) -> ExitStatistics:
    n = batch.n_paths
    p = float(batch.exited.mean())
    mean_t = float(batch.exit_time[batch.exited].mean()) if batch.exited.any() else None
    pos = batch.exit_position[batch.exited]
    if pos.shape[1] == 1:
        vals, edges = pos[:, 0], None
        labels, counts = np.unique(vals, return_counts=True)
        hist = {"positions": labels.tolist(), "counts": counts.tolist()}
    else:
        ang = np.arctan2(pos[:, 1], pos[:, 0]) if pos.size else np.zeros(0)
        counts, edges = np.histogram(ang, bins=bins, range=(-np.pi, np.pi))
        hist = {"angle_edges": edges.tolist(), "counts": counts.tolist()}
    return ExitStatistics(p, _binomial_se(p, n), mean_t, hist, n)


# --- verifications ---------------------------------------------------------------

@dataclass
class RefinementReport:
    status: str                 # "pass", "fail" or "preconditions_unmet"
    dts: list
    fractions: dict             # mode label -> exit fraction per dt
    std_errors: dict
    threshold: float
    assumption: dict
    notes: str = ""

    @property
    def passes(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _refinement_verdict(fracs, ses, threshold):
    ok_final = all(f[-1] < threshold for f in fracs.values())
    ok_trend = True
    for label in fracs:
        f, s = fracs[label], ses[label]
        for j in range(len(f) - 1):
            if f[j + 1] > f[j] + 3.0 * math.hypot(s[j], s[j + 1]):
                ok_trend = False
    return ok_final and ok_trend


def _refine(spec, x0, config, modes, refinements, threshold, report, notes=""):
    dts = [config.dt / 2**j for j in range(refinements)]
    fracs, ses = {}, {}
    for label, mode in modes.items():
        fracs[label], ses[label] = [], []
        for dt in dts:
            stats = exit_statistics(_run(spec, x0, config.replace(dt=dt), mode))
            fracs[label].append(stats.exit_fraction)
            ses[label].append(stats.std_error)
    status = "pass" if _refinement_verdict(fracs, ses, threshold) else "fail"
    return RefinementReport(status, dts, fracs, ses, threshold, report.to_dict(), notes)


def check_viability(spec: ProblemSpec, x0, config: SimulationConfig, feedback=None,
                    params: dict | None = None, threshold: float = DEFAULT_THRESHOLD,
                    refinements: int = 3) -> RefinementReport:
    """Exit fraction under one (certifying) feedback at ``dt, dt/2, dt/4``.

    Without an explicit feedback the certifying controls of the boundary
    degeneracy report are used near the boundary.
    """
    report = check_condition(spec, "irrelevant", params)
    if not report.holds:
        return RefinementReport("preconditions_unmet", [], {}, {}, threshold, report.to_dict())
    mode = as_mode(feedback if feedback is not None else report.feedback())
    return _refine(spec, x0, config, {mode.label: mode}, refinements, threshold, report)


def default_adversaries(spec: ProblemSpec) -> dict:
    modes = {f"fixed[{spec.controls.names[k]}]": FixedControl(k) for k in range(len(spec.controls))}
    modes["random_switching"] = RandomSwitching()
    modes["boundary_seeking"] = BoundarySeeking()
    return modes


def check_invariance(spec: ProblemSpec, x0, config: SimulationConfig, adversarial_policies=None,
                     params: dict | None = None, threshold: float = DEFAULT_THRESHOLD,
                     refinements: int = 3) -> RefinementReport:
    """Worst exit fraction over a family of policies, under ``dt`` refinement."""
    report = check_condition(spec, "invariance", params)
    if not report.holds:
        return RefinementReport("preconditions_unmet", [], {}, {}, threshold, report.to_dict())
    if adversarial_policies is None:
        modes = default_adversaries(spec)
    elif isinstance(adversarial_policies, dict):
        modes = {k: as_mode(v) for k, v in adversarial_policies.items()}
    else:
        modes = {as_mode(m).label: as_mode(m) for m in adversarial_policies}
    notes = ""
    if len(spec.controls) == 1:
        # every mode selects the only control, so the trajectories coincide
        first = next(iter(modes))
        out = _refine(spec, x0, config, {first: modes[first]}, refinements, threshold, report)
        for label in modes:
            out.fractions[label] = list(out.fractions[first])
            out.std_errors[label] = list(out.std_errors[first])
        out.notes = "single control: all policy modes produce identical paths"
        return out
    return _refine(spec, x0, config, modes, refinements, threshold, report, notes)


@dataclass
class MonteCarloValue:
    estimate: float
    std_error: float
    n_paths: int
    horizon: float = 0.0
    tail_bound: float = 0.0
    exit_fraction: float = 0.0
    exit_histogram: dict | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def effective_horizon(lam: float, cost_bound: float, tol: float, dt: float) -> float:
    """Smallest multiple of dt with ``exp(-lam T) |l|/lam < 0.1 tol``."""
    if cost_bound <= 0:
        return dt
    T = math.log(cost_bound / (lam * 0.1 * tol)) / lam
    return max(dt, math.ceil(T / dt) * dt)


def mc_discounted_value(spec: ProblemSpec, x0, lam: float, config: SimulationConfig,
                        tol: float = 2e-2) -> MonteCarloValue:
    """Estimate ``E int_0^T e^{-lam t} l(X_t, alpha_t) dt`` with a truncated horizon.

    The horizon is chosen so the neglected tail is below ``0.1 * tol``. Within a
    step the cost is frozen and the discount integrated exactly. Paths that
    exit stop accruing cost.
    """
    if spec.running_cost is None:
        raise MissingCost(f"problem {spec.name!r} has no running cost")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    bound = sup_bound(spec, "cost")
    T = effective_horizon(lam, bound, tol, config.dt)
    steps = int(round(T / config.dt))
    batch = _run(spec, x0, config, config.control_mode, lam=lam, n_steps=steps)
    vals = batch.discounted_cost
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    tail = math.exp(-lam * T) * bound / lam
    return MonteCarloValue(float(vals.mean()), se, vals.size, T, tail, float(batch.exited.mean()))


@dataclass
class ExitValueReport:
    status: str                   # "ok" or "preconditions_unmet"
    theorem_value: float | None
    estimate: float | None
    std_error: float | None
    nonexit: dict | None
    seeking: dict | None
    min_phi: float | None
    assumptions: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _exit_cost(spec, phi, batch):
    G = np.zeros(batch.n_paths)
    if batch.exited.any():
        G[batch.exited] = np.asarray(phi(batch.exit_position[batch.exited]), dtype=float).reshape(-1)
    se = float(G.std(ddof=1) / math.sqrt(G.size)) if G.size > 1 else 0.0
    stats = exit_statistics(batch)
    return MonteCarloValue(float(G.mean()), se, G.size, batch.T, 0.0, stats.exit_fraction,
                           stats.exit_position_histogram)


def exit_value(spec: ProblemSpec, phi, x0, feedback=None, config: SimulationConfig | None = None,
               params: dict | None = None, inner_angle: float = 0.25,
               outer_angle: float = 1.6) -> ExitValueReport:
    """Monte Carlo value of the exit problem paying ``phi`` at the exit point, 0 otherwise.

    Two witness policies are simulated: the non-exiting certifying feedback
    and an exit-seeking policy aimed at the minimizer of ``phi``; the smaller
    estimate is compared with ``min(min phi, 0)``. ``feedback`` overrides the
    non-exiting policy; ``phi=None`` keeps the model's terminal cost.
    """
    config = config or SimulationConfig()
    if phi is not None:
        spec = spec.with_terminal_cost(phi)
    phi = spec.terminal_cost
    irr = check_condition(spec, "irrelevant", params)
    rel = check_condition(spec, "relevant")
    assumptions = {"irrelevant": irr.to_dict(), "relevant": rel.to_dict()}
    if not (irr.holds and rel.holds):
        return ExitValueReport("preconditions_unmet", None, None, None, None, None, None, assumptions)
    min_phi = rel.witness["min_phi"]
    theorem = min(min_phi, 0.0)
    hold = as_mode(feedback) if feedback is not None else StateFeedback(irr.feedback(), "nonexit")
    seek = ExitSeeking(np.asarray(rel.witness["minimizer"]), rel.witness["control_index"], hold,
                       inner_angle, outer_angle)
    v_hold = _exit_cost(spec, phi, _run(spec, x0, config, hold))
    if min_phi >= 0:
        # G >= 0 for every policy, so steering toward the boundary cannot beat 0
        v_seek = None
        best = v_hold
    else:
        v_seek = _exit_cost(spec, phi, _run(spec, x0, config, seek))
        best = v_hold if v_hold.estimate <= v_seek.estimate else v_seek
    return ExitValueReport("ok", theorem, best.estimate, best.std_error, v_hold.to_dict(),
                           None if v_seek is None else v_seek.to_dict(), min_phi, assumptions)
