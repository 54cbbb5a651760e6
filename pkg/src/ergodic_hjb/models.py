"""Built-in model registry and config-driven coefficient tables."""
from __future__ import annotations

import numpy as np

from . import geometry as geo
from .problem import ControlSet, ProblemSpec, Regularity, constant_cost

DEFAULT_BOUNDARY_PARAMS = {"delta": 0.25, "k": 0.5, "gamma": 0.0}


def _isotropic(s, n):
    out = np.zeros((s.size, n, n))
    for i in range(n):
        out[:, i, i] = s
    return out


def _radius(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def radial_disk_2d(drift_sign: float = -1.0, running_cost=None) -> ProblemSpec:
    """Unit disk, ``b = drift_sign * x``, ``sigma = (1 - |x|) I``, one control."""

    def drift(x, alpha):
        return drift_sign * x

    def diffusion(x, alpha):
        s = 1.0 - _radius(x)
        return _isotropic(s, 2)

    name = "radial_disk_2d" if drift_sign < 0 else "radial_disk_2d_outward"
    return ProblemSpec(
        geom=geo.ball((0.0, 0.0), 1.0),
        controls=ControlSet(((0.0,),)),
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        regularity=Regularity(B=1.0, beta=1.0),
        name=name,
        condition_params={"invariance": dict(DEFAULT_BOUNDARY_PARAMS),
                          "irrelevant": dict(DEFAULT_BOUNDARY_PARAMS)},
    )


def _x_squared(x, alpha):
    return x[:, 0] ** 2


def degenerate_interval_1d(running_cost=_x_squared) -> ProblemSpec:
    """``(-1, 1)`` with ``b = -x`` and ``sigma = 1 - x^2`` (so ``a = (1 - x^2)^2``)."""

    def drift(x, alpha):
        return -x

    def diffusion(x, alpha):
        return (1.0 - x[:, 0] ** 2)[:, None, None]

    return ProblemSpec(
        geom=geo.interval(-1.0, 1.0),
        controls=ControlSet(((0.0,),)),
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        regularity=Regularity(B=2.0, beta=1.0),
        name="degenerate_interval_1d",
        condition_params={"invariance": dict(DEFAULT_BOUNDARY_PARAMS),
                          "irrelevant": dict(DEFAULT_BOUNDARY_PARAMS)},
    )


def halfplane_counterexample(half_width: float = 0.5) -> ProblemSpec:
    """Half-plane fixture with two controls whose boundary drift degenerates at the origin."""

    def drift(x, alpha):
        out = np.zeros_like(x)
        if alpha[0] == 1.0:
            out[:, 1] = 1.0
        else:
            out[:, 1] = x[:, 0] ** 4 - x[:, 1]
        return out

    def diffusion(x, alpha):
        s = np.zeros((x.shape[0], 2, 2))
        if alpha[0] == 1.0:
            s[:, 0, 0] = 1.0
            s[:, 1, 1] = x[:, 0] ** 2 + x[:, 1]
        else:
            s[:, 0, 0] = x[:, 1]
            s[:, 1, 1] = x[:, 1]
        return s

    return ProblemSpec(
        geom=geo.halfplane_patch(half_width),
        controls=ControlSet(((1.0,), (2.0,)), names=("1", "2")),
        drift=drift,
        diffusion=diffusion,
        regularity=Regularity(B=2.0, beta=1.0),
        name="halfplane_counterexample",
        condition_params={"irrelevant": {"delta": 0.1, "k": 0.5, "gamma": 0.0}},
    )


def _first_coordinate(x):
    return np.asarray(x, dtype=float).reshape(-1, 2)[:, 0]


def exit_disk(terminal_cost=_first_coordinate, running_cost=None) -> ProblemSpec:
    """Unit disk with an inward degenerate control ``in`` and an outward noisy control ``out``."""

    def drift(x, alpha):
        return -x if alpha[0] == 0.0 else x.copy()

    def diffusion(x, alpha):
        if alpha[0] == 0.0:
            s = 1.0 - _radius(x)
        else:
            s = np.ones(x.shape[0])
        return _isotropic(s, 2)

    return ProblemSpec(
        geom=geo.ball((0.0, 0.0), 1.0),
        controls=ControlSet(((0.0,), (1.0,)), names=("in", "out")),
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        regularity=Regularity(B=1.0, beta=1.0),
        name="exit_disk",
        condition_params={"invariance": dict(DEFAULT_BOUNDARY_PARAMS),
                          "irrelevant": dict(DEFAULT_BOUNDARY_PARAMS)},
    )


REGISTRY = {
    "radial_disk_2d": radial_disk_2d,
    "degenerate_interval_1d": degenerate_interval_1d,
    "halfplane_counterexample": halfplane_counterexample,
    "exit_disk": exit_disk,
}


# --- config tables -------------------------------------------------------------

def cost_from_config(cfg) -> callable:
    """Running cost from a table.

    ``{"constant": L}``, ``{"quadratic": q, "constant": L}`` (``q |x|^2 + L``),
    ``{"control_square": w}`` adds ``w |alpha|^2``. A bare number is a constant.
    """
    if cfg is None:
        return None
    if isinstance(cfg, (int, float)):
        return constant_cost(cfg)
    unknown = set(cfg) - {"constant", "quadratic", "control_square"}
    if unknown:
        raise KeyError(f"unknown cost terms {sorted(unknown)}")
    const = float(cfg.get("constant", 0.0))
    quad = float(cfg.get("quadratic", 0.0))
    csq = float(cfg.get("control_square", 0.0))
    if quad == 0.0 and csq == 0.0:
        return constant_cost(const)

    def cost(x, alpha):
        return quad * np.sum(x**2, axis=1) + csq * float(np.dot(alpha, alpha)) + const

    return cost


def terminal_from_config(cfg):
    """Terminal cost ``phi(x) = w . x + offset`` from ``{"linear": [...], "offset": c}``."""
    if cfg is None:
        return None
    w = np.asarray(cfg.get("linear", [1.0]), dtype=float)
    off = float(cfg.get("offset", 0.0))

    def phi(x):
        x = np.asarray(x, dtype=float).reshape(-1, w.size)
        return x @ w + off

    return phi


def _sigma_profile(geom, table, n):
    """Scalar noise profile ``s(x) I``: constant or a polynomial in the signed distance."""
    if "constant" in table:
        c = float(table["constant"])
        return lambda x: np.full(x.shape[0], c)
    if "distance_poly" in table:
        coeffs = np.asarray(table["distance_poly"], dtype=float)
        return lambda x: np.polynomial.polynomial.polyval(geo.signed_distance(geom, x), coeffs)
    if "radius_poly" in table:
        coeffs = np.asarray(table["radius_poly"], dtype=float)
        c0 = geom.centroid
        return lambda x: np.polynomial.polynomial.polyval(np.linalg.norm(x - c0, axis=1), coeffs)
    raise KeyError("sigma needs one of constant, distance_poly, radius_poly")


def inline_model(cfg: dict) -> ProblemSpec:
    """Build a user model from coefficient tables.

    Each control entry gives an affine drift ``b = matrix x + offset`` and a
    scalar noise profile ``sigma = s(x) I``.
    """
    geom = geo.from_dict(cfg["geometry"])
    n = geom.dimension
    entries = cfg["controls"]
    if not entries:
        raise KeyError("controls must be nonempty")
    mats, offs, profiles, names, points = [], [], [], [], []
    for i, entry in enumerate(entries):
        drift = entry.get("drift", {})
        mats.append(np.asarray(drift.get("matrix", np.zeros((n, n))), dtype=float).reshape(n, n))
        offs.append(np.asarray(drift.get("offset", np.zeros(n)), dtype=float).reshape(n))
        profiles.append(_sigma_profile(geom, entry.get("sigma", {"constant": 0.0}), n))
        names.append(str(entry.get("name", i)))
        points.append(tuple(np.atleast_1d(entry.get("point", float(i)))))

    def index_of(alpha):
        return points.index(tuple(float(v) for v in alpha))

    def drift_fn(x, alpha):
        k = index_of(alpha)
        return x @ mats[k].T + offs[k]

    def diffusion_fn(x, alpha):
        k = index_of(alpha)
        return profiles[k](x)[:, None, None] * np.eye(n)[None]

    reg = cfg.get("regularity", {})
    return ProblemSpec(
        geom=geom,
        controls=ControlSet(tuple(points), tuple(names)),
        drift=drift_fn,
        diffusion=diffusion_fn,
        running_cost=cost_from_config(cfg.get("cost")),
        terminal_cost=terminal_from_config(cfg.get("terminal_cost")),
        regularity=Regularity(B=float(reg.get("B", 1.0)), beta=float(reg.get("beta", 1.0))),
        name=str(cfg.get("name", "inline")),
        condition_params=dict(cfg.get("condition_params", {})),
    )


def build_model(cfg) -> ProblemSpec:
    """Resolve a model from a registry name, ``{"name": ..., **options}`` or inline tables."""
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    cfg = dict(cfg)
    if "geometry" in cfg:
        return inline_model(cfg)
    name = cfg.pop("name", None)
    if name not in REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {sorted(REGISTRY)}")
    cost = cfg.pop("cost", "__default__")
    phi = cfg.pop("terminal_cost", "__default__")
    spec = REGISTRY[name](**cfg)
    if cost != "__default__":
        spec = spec.with_cost(cost_from_config(cost))
    if phi != "__default__":
        spec = spec.with_terminal_cost(terminal_from_config(phi))
    return spec
