"""Controlled problem data and the HJB operator evaluated on jets.

Coefficient callables are vectorized over points: ``drift(x, alpha)`` maps an
``(N, n)`` array and one control point to ``(N, n)``, ``diffusion(x, alpha)``
returns ``(N, n, r)`` and ``running_cost(x, alpha)`` returns ``(N,)``.
The diffusion matrix is ``a = sigma sigma^T`` and the SDE carries a factor
``sqrt(2)`` on the noise, so the generator is ``b.D + tr(a D^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import geometry as geo
from .errors import MissingCost, OutsideCollar
from .geometry import DomainGeometry

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ControlSet:
    points: tuple
    names: tuple = ()

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.points)
        if not pts:
            raise ValueError("control set must be nonempty")
        if len(set(pts)) != len(pts):
            raise ValueError("control set contains duplicate points")
        object.__setattr__(self, "points", pts)
        names = tuple(self.names) or tuple(str(i) for i in range(len(pts)))
        if len(names) != len(pts):
            raise ValueError("one name per control point")
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.points)

    def point(self, k: int) -> np.ndarray:
        return np.asarray(self.points[k])

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Regularity:
    """Hölder data of the coefficients; ``drift_modulus`` is descriptive only."""

    B: float = 1.0
    beta: float = 1.0
    drift_modulus: str = "lipschitz"

    def __post_init__(self):
        if not 0.5 < self.beta <= 1.0:
            raise ValueError("beta must lie in (1/2, 1]")


@dataclass(frozen=True)
class ProblemSpec:
    geom: DomainGeometry
    controls: ControlSet
    drift: Field
    diffusion: Field
    running_cost: Field | None = None
    terminal_cost: Callable[[np.ndarray], np.ndarray] | None = None
    regularity: Regularity = field(default_factory=Regularity)
    name: str = "custom"
    # default (delta, k, gamma) per boundary condition, used to gate checks
    condition_params: dict = field(default_factory=dict, hash=False)

    @property
    def dimension(self) -> int:
        return self.geom.dimension

    def b(self, x, k: int) -> np.ndarray:
        return np.asarray(self.drift(np.atleast_2d(x), self.controls.point(k)), dtype=float)

    def sigma(self, x, k: int) -> np.ndarray:
        return np.asarray(self.diffusion(np.atleast_2d(x), self.controls.point(k)), dtype=float)

    def a(self, x, k: int) -> np.ndarray:
        s = self.sigma(x, k)
        return np.einsum("nik,njk->nij", s, s)

    def cost(self, x, k: int) -> np.ndarray:
        if self.running_cost is None:
            raise MissingCost(f"problem {self.name!r} has no running cost")
        x = np.atleast_2d(x)
        out = np.asarray(self.running_cost(x, self.controls.point(k)), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)).copy()

    def with_cost(self, running_cost: Field | None, name: str | None = None) -> "ProblemSpec":
        return replace(self, running_cost=running_cost, name=name or self.name)

    def with_terminal_cost(self, phi) -> "ProblemSpec":
        return replace(self, terminal_cost=phi)


def constant_cost(value: float) -> Field:
    def cost(x, alpha):
        return np.full(x.shape[0], float(value))
    cost.constant = float(value)
    return cost


def shifted_cost(cost: Field, shift: float) -> Field:
    def shifted(x, alpha):
        return cost(x, alpha) + shift
    return shifted


@dataclass
class Jet:
    x: np.ndarray
    p: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if not np.allclose(self.X, np.swapaxes(self.X, -1, -2), atol=1e-12, rtol=0):
            raise ValueError("jet Hessian must be symmetric")


def _batch_jet(spec: ProblemSpec, x, p, X):
    n = spec.dimension
    x = np.asarray(x, dtype=float).reshape(-1, n)
    p = np.asarray(p, dtype=float).reshape(-1, n)
    X = np.asarray(X, dtype=float).reshape(-1, n, n)
    return x, p, X


def control_values(spec: ProblemSpec, x, p, X, with_cost: bool = False) -> np.ndarray:
    """``-b.p - tr(aX)`` (minus ``l`` if requested) for every control: shape ``(K, N)``."""
    x, p, X = _batch_jet(spec, x, p, X)
    vals = np.empty((len(spec.controls), x.shape[0]))
    for k in range(len(spec.controls)):
        b = spec.b(x, k)
        s = spec.sigma(x, k)
        tr = np.einsum("nij,nik,njk->n", X, s, s)
        vals[k] = -np.einsum("ni,ni->n", b, p) - tr
        if with_cost:
            vals[k] -= spec.cost(x, k)
    return vals


def hjb_value(spec: ProblemSpec, jet: Jet) -> tuple[float, int]:
    """``max_alpha(-b.p - tr(aX))`` and the first maximizing control index."""
    vals = control_values(spec, jet.x, jet.p, jet.X)[:, 0]
    k = int(np.argmax(vals))
    return float(vals[k]), k


def hamiltonian_value(spec: ProblemSpec, jet: Jet) -> float:
    if spec.running_cost is None:
        raise MissingCost(f"problem {spec.name!r} has no running cost")
    return float(control_values(spec, jet.x, jet.p, jet.X, with_cost=True)[:, 0].max())


# --- barrier functions -------------------------------------------------------

SUPER_KINDS = ("neg_log_d", "pow_neg", "shifted_log", "exit_barrier")
SUB_KINDS = ("log_d", "pow_pos")


@dataclass(frozen=True)
class Barrier:
    """A barrier profile built on the signed distance.

    kinds: ``neg_log_d`` (-log d), ``log_d`` (log d), ``pow_neg`` (d^-kappa),
    ``pow_pos`` (-d^-kappa, the subsolution twin of ``pow_neg``),
    ``shifted_log`` (-log(d + eta)) and ``exit_barrier``
    (1 - exp(-k (d + lam |x - anchor|^2))).
    """

    kind: str
    kappa: float = 1.0
    eta: float = 0.0
    k: float = 1.0
    lam: float = 1.0
    anchor: tuple = ()

    def __post_init__(self):
        if self.kind not in SUPER_KINDS + SUB_KINDS:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.kind == "exit_barrier" and not self.anchor:
            raise ValueError("exit_barrier needs an anchor point")

    @property
    def is_supersolution(self) -> bool:
        return self.kind in SUPER_KINDS

    @classmethod
    def parse(cls, spec) -> "Barrier":
        """Accept a Barrier, a bare kind name or a dict like ``{"kind": "pow_neg", "kappa": 2}``."""
        if isinstance(spec, Barrier):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        spec = dict(spec)
        if "anchor" in spec:
            spec["anchor"] = tuple(float(v) for v in spec["anchor"])
        return cls(**spec)

    @property
    def label(self) -> str:
        if self.kind in ("pow_neg", "pow_pos"):
            return f"{self.kind}({self.kappa:g})"
        if self.kind == "shifted_log":
            return f"shifted_log({self.eta:g})"
        return self.kind


def _profile(barrier: Barrier, d):
    """f(d), f'(d), f''(d) for the distance-only kinds."""
    kind = barrier.kind
    if kind == "neg_log_d":
        return -np.log(d), -1.0 / d, 1.0 / d**2
    if kind == "log_d":
        return np.log(d), 1.0 / d, -1.0 / d**2
    kap = barrier.kappa
    if kind == "pow_neg":
        return d**-kap, -kap * d ** (-kap - 1), kap * (kap + 1) * d ** (-kap - 2)
    if kind == "pow_pos":
        return -(d**-kap), kap * d ** (-kap - 1), -kap * (kap + 1) * d ** (-kap - 2)
    s = d + barrier.eta
    return -np.log(s), -1.0 / s, 1.0 / s**2


def barrier_value(geom: DomainGeometry, barrier, x):
    barrier = Barrier.parse(barrier)
    d = geo.signed_distance(geom, x)
    if barrier.kind == "exit_barrier":
        xb = np.asarray(x, dtype=float).reshape(-1, geom.dimension)
        g = np.atleast_1d(d) + barrier.lam * np.sum((xb - np.asarray(barrier.anchor)) ** 2, axis=1)
        w = 1.0 - np.exp(-barrier.k * g)
        return float(w[0]) if np.ndim(d) == 0 else w
    return _profile(barrier, d)[0]


def barrier_jet(geom: DomainGeometry, barrier, x):
    """Exact gradient and Hessian of a barrier by the chain rule on ``distance_jet``.

    For a single point returns a :class:`Jet`; for a batch returns ``(p, X)`` arrays.
    """
    barrier = Barrier.parse(barrier)
    d, Dd, D2d = geo.distance_jet(geom, x)
    single = np.ndim(d) == 0
    d = np.atleast_1d(d)
    Dd = Dd.reshape(d.size, -1)
    D2d = D2d.reshape(d.size, Dd.shape[1], Dd.shape[1])
    outer = Dd[:, :, None] * Dd[:, None, :]
    if barrier.kind == "exit_barrier":
        xb = np.asarray(x, dtype=float).reshape(d.size, -1)
        lam, k = barrier.lam, barrier.k
        off = xb - np.asarray(barrier.anchor)
        g = d + lam * np.sum(off**2, axis=1)
        Dg = Dd + 2 * lam * off
        D2g = D2d + 2 * lam * np.eye(Dd.shape[1])[None]
        e = np.exp(-k * g)
        p = (k * e)[:, None] * Dg
        X = e[:, None, None] * (k * D2g - k**2 * Dg[:, :, None] * Dg[:, None, :])
    else:
        if np.any(d <= 0):
            raise OutsideCollar("barrier needs interior points (d > 0)")
        _, f1, f2 = _profile(barrier, d)
        p = f1[:, None] * Dd
        X = f1[:, None, None] * D2d + f2[:, None, None] * outer
    if single:
        return Jet(np.asarray(x, dtype=float).reshape(-1), p[0], X[0])
    return p, X


def sup_bound(spec: ProblemSpec, which: str = "cost", density: int = 48) -> float:
    """Sampled sup-norm of ``|l|``, ``|b|`` or ``|sigma|`` over the closed domain."""
    pts = geo.interior_sample(spec.geom, density)
    if spec.geom.smoothness_radius > 0 and spec.geom.shape != "halfplane_patch":
        bnd, _ = geo.boundary_points(spec.geom, 4 * density)
        pts = np.vstack([pts, bnd])
    best = 0.0
    for k in range(len(spec.controls)):
        if which == "cost":
            v = np.abs(spec.cost(pts, k))
        elif which == "drift":
            v = np.linalg.norm(spec.b(pts, k), axis=1)
        else:
            v = np.linalg.norm(spec.sigma(pts, k), axis=(1, 2))
        best = max(best, float(np.max(v)))
    return best
