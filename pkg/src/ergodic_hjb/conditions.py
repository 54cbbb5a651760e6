"""Sampling certificates for the boundary-degeneracy conditions and Lyapunov barriers.

These are not proofs: every check evaluates the defining inequality on a
deterministic sample and records the smallest slack, so a failure can be
reproduced from ``worst_point``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import BadDelta, MissingTerminalCost
from .problem import Barrier, ProblemSpec, barrier_jet, control_values

SIGMA_TOL = 1e-9
CONDITIONS = ("irrelevant", "invariance", "relevant", "sell", "compact_convexity")


@dataclass
class LyapunovReport:
    kind: str
    delta: float
    M: float
    min_margin: float
    worst_point: list
    passes: bool
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lyapunov_margin(spec: ProblemSpec, kind, delta: float, M: float = 0.0,
                    density: int = 64) -> LyapunovReport:
    """Smallest slack of ``F[barrier] > M`` (or ``< -M`` for subsolution kinds) on the ring."""
    barrier = Barrier.parse(kind)
    pts = geo.ring_points(spec.geom, delta, density)
    if barrier.kind == "exit_barrier":
        near = np.linalg.norm(pts - np.asarray(barrier.anchor), axis=1) < delta
        pts = pts[near]
    p, X = barrier_jet(spec.geom, barrier, pts)
    F = control_values(spec, pts, p, X).max(axis=0)
    slack = F - M if barrier.is_supersolution else -M - F
    i = int(np.argmin(slack))
    return LyapunovReport(barrier.label, float(delta), float(M), float(slack[i]),
                          pts[i].tolist(), bool(slack[i] > 0), int(pts.shape[0]))


@dataclass
class AssumptionReport:
    condition: str
    holds: bool
    witness: dict
    samples_checked: int
    certifying_controls: np.ndarray | None = field(default=None, repr=False)
    boundary: np.ndarray | None = field(default=None, repr=False)
    notes: str = ""

    def to_dict(self) -> dict:
        out = {"condition": self.condition, "holds": self.holds,
               "witness": self.witness, "samples_checked": self.samples_checked}
        if self.notes:
            out["notes"] = self.notes
        return out

    def feedback(self, default: int = 0):
        """State feedback choosing the certifying control of the nearest boundary sample."""
        if self.certifying_controls is None or self.boundary is None:
            raise ValueError(f"{self.condition} report carries no certifying controls")
        ctl = np.where(np.asarray(self.certifying_controls) >= 0, self.certifying_controls, default)
        if np.all(ctl == ctl[0]):
            k = int(ctl[0])
            return lambda x: np.full(np.atleast_2d(x).shape[0], k, dtype=int)
        tree = cKDTree(self.boundary)

        def choose(x):
            return ctl[tree.query(np.atleast_2d(x))[1]]

        return choose


def _boundary_sample(spec, count, boundary):
    if boundary is None:
        return geo.boundary_points(spec.geom, count)
    pts = np.asarray(boundary, dtype=float).reshape(-1, spec.dimension)
    _, normals, _ = geo.distance_jet(spec.geom, pts)
    return pts, normals.reshape(pts.shape)


def _sigma_normal(spec, x, normals, k):
    s = spec.sigma(x, k)
    return np.linalg.norm(np.einsum("nik,ni->nk", s, normals), axis=1)


def _drift_term(spec, x, k):
    """``b.Dd + tr(a D^2 d)`` at points of the collar."""
    _, Dd, D2d = geo.distance_jet(spec.geom, x)
    Dd = Dd.reshape(x.shape[0], -1)
    D2d = D2d.reshape(x.shape[0], Dd.shape[1], Dd.shape[1])
    b = spec.b(x, k)
    a = spec.a(x, k)
    return np.einsum("ni,ni->n", b, Dd) + np.einsum("nij,nji->n", a, D2d)


def _degeneracy(spec, condition, params, n_boundary, levels, boundary):
    delta = float(params["delta"])
    kk = float(params["k"])
    gamma = float(params["gamma"])
    if not 0 < delta <= spec.geom.smoothness_radius:
        raise BadDelta(f"delta={delta} outside (0, {spec.geom.smoothness_radius}]")
    xb, nb = _boundary_sample(spec, n_boundary, boundary)
    t = geo.ring_levels(delta, levels)
    ring = (xb[:, None, :] + t[None, :, None] * nb[:, None, :]).reshape(-1, spec.dimension)
    K, Nb, L = len(spec.controls), xb.shape[0], t.size
    margin = np.empty((K, Nb))
    where = np.empty((K, Nb), dtype=int)  # ring level index of the worst slack, -1 for sigma
    for k in range(K):
        sig = _sigma_normal(spec, xb, nb, k)
        slack = (_drift_term(spec, ring, k) - kk * np.tile(t, Nb) ** gamma).reshape(Nb, L)
        j = np.argmin(slack, axis=1)
        m = slack[np.arange(Nb), j]
        bad_sigma = sig > SIGMA_TOL
        margin[k] = np.where(bad_sigma, -sig, m)
        where[k] = np.where(bad_sigma, -1, j)
    if condition == "irrelevant":
        kbest = np.argmax(margin, axis=0)
        per_point = margin[kbest, np.arange(Nb)]
        certifying = np.where(per_point >= 0, kbest, -1)
        kworst = kbest
    else:
        kworst = np.argmin(margin, axis=0)
        per_point = margin[kworst, np.arange(Nb)]
        certifying = np.where(per_point >= 0, kworst, -1)
    i = int(np.argmin(per_point))
    k_i = int(kworst[i])
    j_i = where[k_i, i]
    worst = xb[i] if j_i < 0 else xb[i] + t[j_i] * nb[i]
    beta = spec.regularity.beta
    gamma_ok = gamma < 2 * beta - 1
    holds = bool(per_point[i] >= 0 and gamma_ok)
    notes = "" if gamma_ok else f"gamma={gamma} violates gamma < 2*beta - 1 = {2 * beta - 1}"
    witness = {"delta": delta, "k": kk, "gamma": gamma, "worst_point": worst.tolist(),
               "worst_margin": float(per_point[i]), "worst_control": spec.controls.names[k_i],
               "worst_clause": "sigma_normal" if j_i < 0 else "drift"}
    return AssumptionReport(condition, holds, witness, int(Nb * (L + 1) * K),
                            certifying_controls=certifying, boundary=xb, notes=notes)


def _relevant(spec, n_boundary, boundary):
    if spec.terminal_cost is None:
        raise MissingTerminalCost(f"problem {spec.name!r} has no terminal cost")
    xb, nb = _boundary_sample(spec, n_boundary, boundary)
    phi = np.asarray(spec.terminal_cost(xb), dtype=float).reshape(-1)
    mins = np.nonzero(phi <= phi.min() + 1e-12)[0]
    best, arg = -np.inf, (int(mins[0]), 0)
    for k in range(len(spec.controls)):
        sig = _sigma_normal(spec, xb[mins], nb[mins], k) - SIGMA_TOL
        drift = _drift_term(spec, xb[mins], k)
        m = np.maximum(sig, -drift)
        j = int(np.argmax(m))
        if m[j] > best:
            best, arg = float(m[j]), (int(mins[j]), k)
    i, k = arg
    witness = {"delta": None, "k": None, "gamma": None, "worst_point": xb[i].tolist(),
               "worst_margin": best, "min_phi": float(phi.min()),
               "minimizer": xb[i].tolist(), "control": spec.controls.names[k],
               "control_index": k}
    return AssumptionReport("relevant", bool(best > 0), witness,
                            int(mins.size * len(spec.controls)))


def _sell(spec, density):
    pts = geo.interior_sample(spec.geom, density)
    worst, wpt = np.inf, None
    for k in range(len(spec.controls)):
        lam_min = np.linalg.eigvalsh(spec.a(pts, k))[:, 0]
        i = int(np.argmin(lam_min))
        if lam_min[i] < worst:
            worst, wpt = float(lam_min[i]), pts[i]
    witness = {"delta": None, "k": None, "gamma": None, "worst_point": wpt.tolist(),
               "worst_margin": worst}
    return AssumptionReport("sell", bool(worst > 0), witness, int(pts.shape[0] * len(spec.controls)))


def _compact_convexity(spec, density):
    # a finite image {(b, a)} is convex only when it is a single point
    pts = geo.interior_sample(spec.geom, density)
    K = len(spec.controls)
    spread = np.zeros(pts.shape[0])
    b0, a0 = spec.b(pts, 0), spec.a(pts, 0)
    for k in range(1, K):
        db = np.linalg.norm(spec.b(pts, k) - b0, axis=1)
        da = np.linalg.norm(spec.a(pts, k) - a0, axis=(1, 2))
        spread = np.maximum(spread, db + da)
    i = int(np.argmax(spread))
    witness = {"delta": None, "k": None, "gamma": None, "worst_point": pts[i].tolist(),
               "worst_margin": -float(spread[i])}
    notes = ("finite control samples: convexity holds only for a single image point; "
             "relaxed controls are needed otherwise") if K > 1 else ""
    return AssumptionReport("compact_convexity", bool(spread[i] <= 1e-12), witness,
                            int(pts.shape[0] * K), notes=notes)


def check_condition(spec: ProblemSpec, condition: str, params: dict | None = None,
                    n_boundary: int = 256, levels: int = 64, boundary=None) -> AssumptionReport:
    """Sampling certificate for one of the structural boundary/interior conditions.

    ``params`` supplies ``delta, k, gamma`` for the degeneracy conditions and
    falls back to the model's stored defaults. ``boundary`` restricts the
    boundary sample to explicit points.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    if condition in ("irrelevant", "invariance"):
        if params is None:
            params = spec.condition_params.get(condition) or spec.condition_params.get("invariance")
        if params is None:
            raise ValueError(f"{condition} needs delta, k, gamma parameters")
        return _degeneracy(spec, condition, params, n_boundary, levels, boundary)
    if condition == "relevant":
        return _relevant(spec, n_boundary, boundary)
    if condition == "sell":
        return _sell(spec, levels)
    return _compact_convexity(spec, levels)
