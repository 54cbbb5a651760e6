"""Discounted and ergodic Bellman solvers on a monotone grid discretization.

The discounted problem ``lam u + max_k(-L_k u - l_k) = 0`` is solved by policy
iteration; the ergodic pair is read off the vanishing-discount limit with the
convention ``c = -lim lam u_lam(x_tilde)`` so that a constant cost ``L`` gives
``c = -L``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .conditions import check_condition
from .discretize import (DiscreteField, FeedbackPolicy, Grid, StencilSet, assemble,
                         bellman_terms)
from .errors import (BadDelta, GridMismatch, NoConvergence, ScheduleTooShort, Singular)
from .problem import ProblemSpec, constant_cost

log = logging.getLogger(__name__)


@dataclass
class DiscountedSolution:
    lam: float
    field: DiscreteField
    residual_sup: float
    policy: FeedbackPolicy
    iterations: int


def bellman_residual(stencils: StencilSet, u: np.ndarray, lam: float) -> np.ndarray:
    return lam * u + bellman_terms(stencils, u).max(axis=0)


def _improve(stencils, u, current):
    terms = bellman_terms(stencils, u)
    best = np.argmax(terms, axis=0)
    # keep the current control on ties so the iteration cannot cycle
    idx = np.arange(u.size)
    gain = terms[best, idx] - terms[current, idx]
    scale = 1e-12 * max(1.0, float(np.abs(terms).max()))
    return np.where(gain > scale, best, current)


def solve_discounted(spec: ProblemSpec, grid: Grid, lam: float, tol: float = 1e-9,
                     max_iter: int = 200, stencils: StencilSet | None = None,
                     initial_policy=None) -> DiscountedSolution:
    """Howard policy iteration for ``lam u + H(x, Du, D^2u) = 0`` on the grid.

    Each policy evaluation solves ``(lam I - L_alpha) u = l_alpha`` with a sparse
    direct factorization.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    st = stencils if stencils is not None else assemble(spec, grid)
    N = grid.size
    policy = (np.zeros(N, dtype=int) if initial_policy is None
              else np.asarray(getattr(initial_policy, "controls", initial_policy), dtype=int).copy())
    eye = sp.identity(N, format="csc")
    best = np.inf
    u = np.zeros(N)
    for it in range(1, max_iter + 1):
        A = (lam * eye - st.matrix(policy)).tocsc()
        rhs = st.costs[policy, np.arange(N)]
        # L kills constants: solve for u - kappa/lam so the O(1/lam) part is exact
        kappa = 0.5 * (rhs.max() + rhs.min())
        u = spla.spsolve(A, rhs - kappa) + kappa / lam
        if not np.all(np.isfinite(u)):
            raise Singular(f"policy evaluation failed at lambda={lam}")
        res = float(np.abs(bellman_residual(st, u, lam)).max())
        best = min(best, res)
        new = _improve(st, u, policy)
        if res < tol or np.array_equal(new, policy):
            # a stable policy is an exact discrete solution up to rounding in the solve
            floor = 64 * np.finfo(float).eps * (lam + 2 * float(np.abs(A.diagonal()).max())) \
                * float(np.abs(u).max())
            if res >= max(tol, floor):
                raise NoConvergence(f"policy stable but residual {res:.3e} >= tol", res)
            log.debug("lambda=%g converged in %d iterations (residual %.2e)", lam, it, res)
            return DiscountedSolution(lam, DiscreteField(grid, u), res,
                                      FeedbackPolicy(grid, policy, spec.controls.names), it)
        policy = new
    raise NoConvergence(f"no convergence in {max_iter} iterations", best)


@dataclass
class VanishingDiscountSchedule:
    lambdas: tuple
    x_tilde: tuple | None = None
    extrapolation: str = "richardson"

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if not lam or any(v <= 0 for v in lam):
            raise ValueError("schedule needs positive lambdas")
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ValueError("schedule must be strictly decreasing")
        if self.extrapolation not in ("last", "richardson"):
            raise ValueError("extrapolation must be 'last' or 'richardson'")
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def geometric(cls, start: float = 1e-1, stop: float = 1e-4, ratio: float = 0.5, **kw):
        """``start, start*ratio, ...`` down to the last value not below ``stop``."""
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        n = int(np.floor(np.log(stop / start) / np.log(ratio) + 1e-9)) + 1
        return cls(tuple(start * ratio**np.arange(n)), **kw)

    def reference_node(self, grid: Grid) -> int:
        target = grid.geom.centroid if self.x_tilde is None else np.asarray(self.x_tilde, float)
        i = int(grid.nearest(target)[0])
        if grid.distance[i] < 0.5 * grid.geom.smoothness_radius - 1e-12:
            raise ValueError(f"reference point {grid.coords[i].tolist()} is too close to the boundary")
        return i


@dataclass
class ErgodicSolution:
    c: float
    chi: DiscreteField
    trace: list
    reference_node: int
    cell_residual: float
    growth_report: list = field(default_factory=list)
    lambda_solutions: list = field(default_factory=list, repr=False)

    @property
    def x_tilde(self) -> list:
        return self.chi.grid.coords[self.reference_node].tolist()

    def to_dict(self) -> dict:
        return {"c": self.c, "x_tilde": self.x_tilde, "lambda_trace": self.trace,
                "cell_residual": self.cell_residual, "growth_table": self.growth_report}


def extrapolate_limit(lams, values, method: str = "richardson") -> float:
    """Limit of ``values`` as ``lams -> 0`` from the last three samples.

    Richardson here is polynomial extrapolation in ``lam``; it falls back to the
    last value when the tail is not monotone.
    """
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    if method == "last" or values.size < 3:
        return float(values[-1])
    l3, v3 = lams[-3:], values[-3:]
    dv = np.diff(v3)
    if not (np.all(dv >= 0) or np.all(dv <= 0)):
        return float(values[-1])
    # Lagrange basis evaluated at lam = 0
    total = 0.0
    for i in range(3):
        w = 1.0
        for j in range(3):
            if j != i:
                w *= (0.0 - l3[j]) / (l3[i] - l3[j])
        total += w * v3[i]
    return float(total)


def core_mask(grid: Grid, fraction: float = 0.25) -> np.ndarray:
    """Nodes at distance at least ``fraction * collar`` from the boundary."""
    return grid.distance >= fraction * grid.geom.smoothness_radius


def solve_ergodic(spec: ProblemSpec, grid: Grid, schedule: VanishingDiscountSchedule | None = None,
                  tol: float = 1e-9, cauchy_tol: float = 1e-2,
                  stencils: StencilSet | None = None, warm_start: bool = True) -> ErgodicSolution:
    """Vanishing-discount construction of the ergodic pair ``(c, chi)``.

    ``chi`` is ``u_lam - u_lam(x_tilde)`` at the smallest ``lam``; the trace
    records ``lam * u_lam(x_tilde)`` and the oscillation of the normalized field
    on the interior core for every ``lam``.
    """
    schedule = schedule or VanishingDiscountSchedule.geometric()
    st = stencils if stencils is not None else assemble(spec, grid)
    ref = schedule.reference_node(grid)
    core = core_mask(grid)
    trace, sols = [], []
    policy = None
    for lam in schedule.lambdas:
        sol = solve_discounted(spec, grid, lam, tol=tol, stencils=st,
                               initial_policy=policy if warm_start else None)
        policy = sol.policy
        u = sol.field.values
        v = u - u[ref]
        trace.append({"lambda": lam, "lambda_u_ref": float(lam * u[ref]),
                      "core_oscillation": float(v[core].max() - v[core].min()),
                      "iterations": sol.iterations, "residual": sol.residual_sup})
        sols.append(sol)
    vals = [t["lambda_u_ref"] for t in trace]
    if len(vals) >= 2 and abs(vals[-1] - vals[-2]) > cauchy_tol:
        raise ScheduleTooShort(f"lambda*u(x_tilde) moved by {abs(vals[-1] - vals[-2]):.3e} "
                               f"> {cauchy_tol} over the last step")
    c = -extrapolate_limit(schedule.lambdas, vals, schedule.extrapolation)
    last = sols[-1].field.values
    chi = DiscreteField(grid, last - last[ref])
    cell = bellman_terms(st, chi.values).max(axis=0) - c
    cell_residual = float(np.abs(cell[core]).max())
    for t in trace:
        t["gap_to_c"] = abs(t["lambda_u_ref"] + c)
    return ErgodicSolution(c, chi, trace, ref, cell_residual, lambda_solutions=sols)


@dataclass
class LiouvilleReport:
    status: str            # "pass", "fail" or "preconditions_unmet"
    is_constant: bool | None
    max_deviation: float | None
    assumption: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_liouville(spec: ProblemSpec, grid: Grid, tol: float = 1e-6, params: dict | None = None,
                    schedule: VanishingDiscountSchedule | None = None) -> LiouvilleReport:
    """Solve the ergodic problem with zero cost and measure how far chi is from constant."""
    report = check_condition(spec, "invariance", params)
    if not report.holds:
        return LiouvilleReport("preconditions_unmet", None, None, report.to_dict())
    zero = spec.with_cost(constant_cost(0.0))
    sol = solve_ergodic(zero, grid, schedule, stencils=assemble(zero, grid, certified=True))
    dev = float(np.abs(sol.chi.values).max())
    ok = dev < tol
    return LiouvilleReport("pass" if ok else "fail", ok, dev, report.to_dict())


@dataclass
class UniquenessReport:
    c_gap: float
    chi_variation: float
    passes: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_uniqueness(sol1: ErgodicSolution, sol2: ErgodicSolution, tol: float = 1e-3) -> UniquenessReport:
    """Equal constants and correctors that differ by a constant."""
    if not sol1.chi.grid.same_as(sol2.chi.grid):
        raise GridMismatch("ergodic solutions live on different grids")
    gap = abs(sol1.c - sol2.c)
    diff = sol1.chi.values - sol2.chi.values
    var = float(diff.max() - diff.min())
    return UniquenessReport(float(gap), var, bool(gap < tol and var < tol))


def boundary_growth_report(field: DiscreteField, geom=None, deltas=(0.2, 0.1, 0.05),
                           reference_node: int | None = None) -> list:
    """Ratio ``|u(x) - u(x_tilde)| / (-log d(x))`` on the band ``delta/2 < d <= delta``.

    Returns one row per delta with the maximal ratio; for a corrector with
    sub-logarithmic growth the ratios decrease as delta shrinks.
    """
    grid = field.grid
    geom = geom or grid.geom
    deltas = [float(d) for d in deltas]
    if any(not 0 < d <= geom.smoothness_radius for d in deltas):
        raise BadDelta(f"deltas must lie in (0, {geom.smoothness_radius}]")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise BadDelta("deltas must be strictly decreasing")
    ref = int(grid.nearest(geom.centroid)[0]) if reference_node is None else reference_node
    d = geo.signed_distance(geom, grid.coords)
    d = np.atleast_1d(d)
    u = field.values
    rows = []
    for delta in deltas:
        band = (d > 0.5 * delta) & (d <= delta)
        if not np.any(band):
            raise BadDelta(f"no grid nodes in the band of width {delta}")
        ratio = np.abs(u[band] - u[ref]) / (-np.log(d[band]))
        rows.append({"delta": delta, "ratio": float(ratio.max()), "nodes": int(band.sum())})
    return rows
