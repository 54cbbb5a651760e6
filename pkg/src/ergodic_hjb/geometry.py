"""Closed-form signed-distance geometry for smooth model domains.

All functions accept either a single point of shape ``(n,)`` or a batch of
shape ``(N, n)`` and return results with the matching leading shape.
The signed distance is positive inside the domain, negative outside.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadDelta, OutsideCollar

SHAPES = ("interval", "ball", "annulus", "halfplane_patch")


@dataclass(frozen=True)
class DomainGeometry:
    """Immutable description of a registered domain.

    ``params`` holds the shape parameters: ``a, b`` for an interval,
    ``center, radius`` for a ball, ``center, r_in, r_out`` for an annulus and
    ``half_width`` (sampling window) for the half-plane patch ``{y > 0}``.
    """

    shape: str
    dimension: int
    params: dict = field(hash=False, compare=True)
    smoothness_radius: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.smoothness_radius > 0:
            raise ValueError("smoothness_radius must be positive")

    # thin method aliases so geometry objects can be passed around alone
    def signed_distance(self, x):
        return signed_distance(self, x)

    def distance_jet(self, x):
        return distance_jet(self, x)

    @property
    def centroid(self) -> np.ndarray:
        p = self.params
        if self.shape == "interval":
            return np.array([0.5 * (p["a"] + p["b"])])
        if self.shape == "halfplane_patch":
            return np.array([0.0, p["half_width"]])
        return np.asarray(p["center"], dtype=float)

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        if self.shape == "interval":
            return np.array([p["a"]]), np.array([p["b"]])
        if self.shape == "ball":
            c = np.asarray(p["center"], dtype=float)
            return c - p["radius"], c + p["radius"]
        if self.shape == "annulus":
            c = np.asarray(p["center"], dtype=float)
            return c - p["r_out"], c + p["r_out"]
        w = p["half_width"]
        return np.array([-w, 0.0]), np.array([w, 2.0 * w])

    def to_dict(self) -> dict:
        out = {"shape": self.shape}
        for k, v in self.params.items():
            out[k] = np.asarray(v).tolist() if isinstance(v, (np.ndarray, list, tuple)) else v
        out["smoothness_radius"] = self.smoothness_radius
        return out


def interval(a: float = -1.0, b: float = 1.0, smoothness_radius: float | None = None) -> DomainGeometry:
    if not b > a:
        raise ValueError("interval needs a < b")
    r = 0.5 * (b - a) if smoothness_radius is None else smoothness_radius
    return DomainGeometry("interval", 1, {"a": float(a), "b": float(b)}, r)


def ball(center=(0.0, 0.0), radius: float = 1.0, smoothness_radius: float | None = None) -> DomainGeometry:
    center = tuple(float(c) for c in np.atleast_1d(center))
    if not radius > 0:
        raise ValueError("radius must be positive")
    r = 0.5 * radius if smoothness_radius is None else smoothness_radius
    return DomainGeometry("ball", len(center), {"center": center, "radius": float(radius)}, r)


def annulus(center=(0.0, 0.0), r_in: float = 0.5, r_out: float = 1.0,
            smoothness_radius: float | None = None) -> DomainGeometry:
    center = tuple(float(c) for c in np.atleast_1d(center))
    if not 0 < r_in < r_out:
        raise ValueError("annulus needs 0 < r_in < r_out")
    r = 0.5 * (r_out - r_in) if smoothness_radius is None else smoothness_radius
    return DomainGeometry("annulus", len(center),
                          {"center": center, "r_in": float(r_in), "r_out": float(r_out)}, r)


def halfplane_patch(half_width: float = 0.5, smoothness_radius: float = 1.0) -> DomainGeometry:
    """Local half-plane ``{y > 0}``; only a window near the origin is ever sampled."""
    return DomainGeometry("halfplane_patch", 2, {"half_width": float(half_width)}, smoothness_radius)


def from_dict(cfg: dict) -> DomainGeometry:
    """Build a geometry from its JSON description, e.g. ``{"shape": "ball", "radius": 1}``."""
    cfg = dict(cfg)
    shape = cfg.pop("shape", None)
    builders = {"interval": interval, "ball": ball, "annulus": annulus,
                "halfplane_patch": halfplane_patch}
    if shape not in builders:
        raise KeyError(f"unknown shape {shape!r}")
    return builders[shape](**cfg)


def _as_batch(geom: DomainGeometry, x):
    x = np.asarray(x, dtype=float)
    # a flat array in 1D is a batch of scalars unless it has exactly one entry
    single = x.ndim == 0 or (x.ndim == 1 and x.size == geom.dimension)
    if x.ndim < 2:
        x = x.reshape(1, -1) if single else x.reshape(-1, 1)
    if x.shape[-1] != geom.dimension:
        raise ValueError(f"expected points of dimension {geom.dimension}, got {x.shape}")
    return x, single


def _radial(geom, x):
    c = np.asarray(geom.params["center"], dtype=float)
    y = x - c
    r = np.sqrt(np.einsum("ij,ij->i", y, y))
    return y, r


def signed_distance(geom: DomainGeometry, x):
    """Exact signed distance ``dist(x, complement) - dist(x, closure)``."""
    xb, single = _as_batch(geom, x)
    p = geom.params
    if geom.shape == "interval":
        d = np.minimum(xb[:, 0] - p["a"], p["b"] - xb[:, 0])
    elif geom.shape == "ball":
        _, r = _radial(geom, xb)
        d = p["radius"] - r
    elif geom.shape == "annulus":
        _, r = _radial(geom, xb)
        d = np.minimum(r - p["r_in"], p["r_out"] - r)
    else:
        d = xb[:, 1].copy()
    return float(d[0]) if single else d


def distance_jet(geom: DomainGeometry, x):
    """Return ``(d, Dd, D2d)`` at points inside the collar ``|d| < smoothness_radius``.

    Raises OutsideCollar if any point leaves the region where d is C^2.
    """
    xb, single = _as_batch(geom, x)
    n = geom.dimension
    N = xb.shape[0]
    d = signed_distance(geom, xb)
    if np.any(np.abs(d) >= geom.smoothness_radius):
        bad = xb[np.argmax(np.abs(d) >= geom.smoothness_radius)]
        raise OutsideCollar(f"point {bad.tolist()} is outside the collar of width "
                            f"{geom.smoothness_radius}")
    grad = np.zeros((N, n))
    hess = np.zeros((N, n, n))
    p = geom.params
    if geom.shape == "interval":
        grad[:, 0] = np.where(xb[:, 0] - p["a"] <= p["b"] - xb[:, 0], 1.0, -1.0)
    elif geom.shape in ("ball", "annulus"):
        y, r = _radial(geom, xb)
        if np.any(r <= 1e-12):
            raise OutsideCollar("distance is not differentiable at the center")
        xhat = y / r[:, None]
        tang = (np.eye(n)[None] - xhat[:, :, None] * xhat[:, None, :]) / r[:, None, None]
        if geom.shape == "ball":
            sign = -np.ones(N)
        else:
            sign = np.where(r - p["r_in"] <= p["r_out"] - r, 1.0, -1.0)
        grad = sign[:, None] * xhat
        hess = sign[:, None, None] * tang
    else:
        grad[:, 1] = 1.0
    if single:
        return float(d[0]), grad[0], hess[0]
    return d, grad, hess


def project_to_boundary(geom: DomainGeometry, x):
    """Nearest boundary point (used to record exit positions)."""
    xb, single = _as_batch(geom, x)
    p = geom.params
    out = xb.copy()
    if geom.shape == "interval":
        out[:, 0] = np.where(xb[:, 0] - p["a"] <= p["b"] - xb[:, 0], p["a"], p["b"])
    elif geom.shape in ("ball", "annulus"):
        y, r = _radial(geom, xb)
        c = np.asarray(p["center"], dtype=float)
        r = np.where(r > 0, r, 1.0)
        xhat = y / r[:, None]
        if geom.shape == "ball":
            rad = np.full_like(r, p["radius"])
        else:
            rad = np.where(r - p["r_in"] <= p["r_out"] - r, p["r_in"], p["r_out"])
        out = c + rad[:, None] * xhat
    else:
        out[:, 1] = 0.0
    return out[0] if single else out


def boundary_points(geom: DomainGeometry, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic boundary sample and the inward unit normal at each point."""
    p = geom.params
    if geom.shape == "interval":
        return np.array([[p["a"]], [p["b"]]]), np.array([[1.0], [-1.0]])
    if geom.shape == "halfplane_patch":
        s = np.linspace(-p["half_width"], p["half_width"], count)
        pts = np.column_stack([s, np.zeros(count)])
        return pts, np.tile([0.0, 1.0], (count, 1))
    if geom.dimension == 1:
        c = p["center"][0]
        if geom.shape == "ball":
            R = p["radius"]
            return np.array([[c - R], [c + R]]), np.array([[1.0], [-1.0]])
        pts = np.array([[c - p["r_out"]], [c - p["r_in"]], [c + p["r_in"]], [c + p["r_out"]]])
        return pts, np.array([[1.0], [-1.0], [1.0], [-1.0]])
    if geom.dimension != 2:
        raise NotImplementedError("boundary sampling is implemented for n <= 2")
    c = np.asarray(p["center"], dtype=float)
    theta = 2.0 * np.pi * np.arange(count) / count
    u = np.column_stack([np.cos(theta), np.sin(theta)])
    if geom.shape == "ball":
        return c + p["radius"] * u, -u
    pts = np.vstack([c + p["r_out"] * u, c + p["r_in"] * u])
    normals = np.vstack([-u, u])
    return pts, normals


def ring_levels(delta: float, levels: int) -> np.ndarray:
    """Midpoint distance levels strictly inside (0, delta)."""
    return delta * (np.arange(levels) + 0.5) / levels


def ring_points(geom: DomainGeometry, delta: float, density: int = 64) -> np.ndarray:
    """Deterministic sample of the ring ``{0 < d < delta}``.

    Points are laid along inward normals from ``density`` boundary points at
    ``density`` distance levels, so ``d`` equals the level exactly.
    """
    if not 0 < delta <= geom.smoothness_radius:
        raise BadDelta(f"delta={delta} must lie in (0, {geom.smoothness_radius}]")
    base, normals = boundary_points(geom, density)
    t = ring_levels(delta, density)
    pts = base[:, None, :] + t[None, :, None] * normals[:, None, :]
    return pts.reshape(-1, geom.dimension)


def interior_sample(geom: DomainGeometry, density: int = 32) -> np.ndarray:
    """Lattice points of the bounding box lying strictly inside the domain."""
    lo, hi = geom.bounding_box
    axes = [np.linspace(l, h, density + 2)[1:-1] for l, h in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geom.dimension)
    return mesh[signed_distance(geom, mesh) > 0]
