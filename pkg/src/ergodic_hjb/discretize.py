"""Uniform grids and a monotone upwind discretization of the controlled generator.

For a control ``k`` the discrete generator is

    (L_k u)_i = sum_j w_kij (u_j - u_i),   w_kij >= 0,

with upwind drift weights ``b^+/h``, ``b^-/h`` and central diffusion weights
``a_jj/h^2`` along each axis. Couplings to nodes outside the interior mask
are dropped, so no boundary condition is imposed.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .errors import NonDiagonalDiffusion, NonMonotone, ShapeMismatch, TooCoarse
from .geometry import DomainGeometry
from .problem import ProblemSpec

MIN_NODES_PER_AXIS = 3


class UncertifiedBoundaryWarning(UserWarning):
    """Exterior couplings were dropped on a problem without an invariance certificate."""


@dataclass
class Grid:
    geom: DomainGeometry
    h: float
    axes: tuple
    mask: np.ndarray            # interior flag on the full lattice
    coords: np.ndarray          # (N, n) interior node coordinates
    lattice_index: np.ndarray   # (N, n) integer lattice position per node
    neighbors: np.ndarray       # (N, 2n) node index of -e_j / +e_j neighbour, -1 if masked
    distance: np.ndarray        # signed distance per node

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]

    @property
    def boundary_adjacent(self) -> np.ndarray:
        return np.any(self.neighbors < 0, axis=1)

    def nearest(self, x) -> np.ndarray:
        """Index of the nearest interior node for each point (lattice rounding, then search)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        lo = np.array([a[0] for a in self.axes])
        shape = self.mask.shape
        ij = np.clip(np.rint((x - lo) / self.h).astype(int), 0, np.array(shape) - 1)
        flat = np.ravel_multi_index(tuple(ij.T), shape)
        out = self._node_of_flat[flat]
        missing = out < 0
        if np.any(missing):
            d2 = ((x[missing, None, :] - self.coords[None, :, :]) ** 2).sum(axis=2)
            out[missing] = np.argmin(d2, axis=1)
        return out

    @cached_property
    def _node_of_flat(self) -> np.ndarray:
        lut = np.full(self.mask.size, -1, dtype=int)
        flat = np.ravel_multi_index(tuple(self.lattice_index.T), self.mask.shape)
        lut[flat] = np.arange(self.size)
        return lut

    def same_as(self, other: "Grid") -> bool:
        return (self.h == other.h and self.mask.shape == other.mask.shape
                and np.array_equal(self.coords, other.coords))

    def metadata(self) -> dict:
        return {"h": self.h,
                "axis_extents": [[float(a[0]), float(a[-1])] for a in self.axes],
                "lattice_shape": list(self.mask.shape),
                "interior_nodes": int(self.size),
                "boundary_adjacent_nodes": int(self.boundary_adjacent.sum())}


def build_grid(geom: DomainGeometry, h: float) -> Grid:
    """Lattice ``lo + i h`` over the bounding box, keeping nodes with ``d > 0``."""
    if not h > 0:
        raise ValueError("h must be positive")
    lo, hi = geom.bounding_box
    axes = tuple(l + h * np.arange(int(np.floor((u - l) / h + 1e-9)) + 1) for l, u in zip(lo, hi))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, geom.dimension)
    d_all = geo.signed_distance(geom, pts)
    mask = (d_all > 1e-12).reshape(mesh.shape[:-1])
    idx = np.argwhere(mask)
    for j in range(geom.dimension):
        count = np.unique(idx[:, j]).size
        if count < MIN_NODES_PER_AXIS:
            raise TooCoarse(f"h={h} leaves {count} interior nodes along axis {j}")
    coords = np.stack([axes[j][idx[:, j]] for j in range(geom.dimension)], axis=1)
    node = np.full(mask.shape, -1, dtype=int)
    node[tuple(idx.T)] = np.arange(idx.shape[0])
    n = geom.dimension
    nbr = np.full((idx.shape[0], 2 * n), -1, dtype=int)
    for j in range(n):
        for s, col in ((-1, 2 * j), (1, 2 * j + 1)):
            other = idx.copy()
            other[:, j] += s
            ok = (other[:, j] >= 0) & (other[:, j] < mask.shape[j])
            nbr[ok, col] = node[tuple(other[ok].T)]
    dist = d_all.reshape(mask.shape)[tuple(idx.T)]
    return Grid(geom, float(h), axes, mask, coords, idx, nbr, dist)


@dataclass
class DiscreteField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ShapeMismatch(f"field has shape {self.values.shape}, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def at(self, x) -> np.ndarray:
        return self.values[self.grid.nearest(x)]

    def to_csv(self, path, column: str = "value") -> Path:
        path = Path(path)
        names = ["x", "y", "z"][: self.grid.dimension]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + [column])
            for c, v in zip(self.grid.coords, self.values):
                w.writerow([f"{t:.12g}" for t in c] + [f"{v:.17g}"])
        return path

    def write_metadata(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.grid.metadata(), indent=2, sort_keys=True))
        return path


@dataclass
class FeedbackPolicy:
    grid: Grid
    controls: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=int)
        if self.controls.shape != (self.grid.size,):
            raise ShapeMismatch("one control index per interior node")

    def __call__(self, x) -> np.ndarray:
        return self.controls[self.grid.nearest(x)]


@dataclass
class StencilSet:
    grid: Grid
    weights: np.ndarray   # (K, N, 2n) nonnegative couplings to grid.neighbors
    costs: np.ndarray     # (K, N) running cost per node and control
    dropped: np.ndarray   # (K, N) weight that pointed outside the mask
    has_cost: bool = True
    _mats: dict = field(default_factory=dict, repr=False)

    @property
    def n_controls(self) -> int:
        return self.weights.shape[0]

    def diagonal(self, k: int) -> np.ndarray:
        return -self.weights[k].sum(axis=1)

    def matrix(self, policy) -> sp.csr_matrix:
        """Sparse generator for a per-node control choice (rows balance to zero)."""
        policy = _policy_array(policy, self.grid)
        N = self.grid.size
        w = self.weights[policy, np.arange(N)]
        nbr = self.grid.neighbors
        keep = nbr >= 0
        rows = np.repeat(np.arange(N), nbr.shape[1]).reshape(N, -1)[keep]
        data = np.concatenate([w[keep], -w.sum(axis=1)])
        r = np.concatenate([rows, np.arange(N)])
        c = np.concatenate([nbr[keep], np.arange(N)])
        return sp.csr_matrix((data, (r, c)), shape=(N, N))

    def generator_matrix(self, k: int) -> sp.csr_matrix:
        if k not in self._mats:
            self._mats[k] = self.matrix(np.full(self.grid.size, k))
        return self._mats[k]

    def apply_all(self, u: np.ndarray) -> np.ndarray:
        """``L_k u`` for every control, shape ``(K, N)``."""
        nbr = self.grid.neighbors
        diff = np.where(nbr >= 0, u[np.where(nbr >= 0, nbr, 0)] - u[:, None], 0.0)
        return np.einsum("knj,nj->kn", self.weights, diff)


def _policy_array(policy, grid: Grid) -> np.ndarray:
    if isinstance(policy, FeedbackPolicy):
        policy = policy.controls
    policy = np.asarray(policy, dtype=int)
    if policy.ndim == 0:
        policy = np.full(grid.size, int(policy))
    if policy.shape != (grid.size,):
        raise ShapeMismatch(f"policy has shape {policy.shape}, expected ({grid.size},)")
    return policy


def assemble(spec: ProblemSpec, grid: Grid, certified: bool | None = None) -> StencilSet:
    """Monotone upwind stencils for every control.

    ``certified`` states whether the invariance condition is known to hold;
    when left as None it is checked with the model's stored parameters and a
    warning is emitted if the certificate is missing or fails.
    """
    if certified is None:
        from .conditions import check_condition
        params = spec.condition_params.get("invariance")
        certified = bool(params) and check_condition(spec, "invariance", params).holds
    if not certified:
        warnings.warn(f"assembling {spec.name!r} without an invariance certificate: "
                      "dropping exterior couplings imposes an artificial boundary",
                      UncertifiedBoundaryWarning, stacklevel=2)
    x = grid.coords
    N, n = x.shape
    K = len(spec.controls)
    h = grid.h
    weights = np.zeros((K, N, 2 * n))
    costs = np.zeros((K, N))
    for k in range(K):
        b = spec.b(x, k)
        a = spec.a(x, k)
        off = a.copy()
        off[:, np.arange(n), np.arange(n)] = 0.0
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(off).max() > 1e-12 * scale:
            raise NonDiagonalDiffusion(f"control {spec.controls.names[k]!r} has a non-diagonal a")
        diag = a[:, np.arange(n), np.arange(n)]
        weights[k, :, 0::2] = np.maximum(-b, 0.0) / h + diag / h**2
        weights[k, :, 1::2] = np.maximum(b, 0.0) / h + diag / h**2
        if spec.running_cost is not None:
            costs[k] = spec.cost(x, k)
    if np.any(weights < 0):
        raise NonMonotone("negative off-diagonal weight")
    outside = grid.neighbors < 0
    dropped = np.where(outside[None], weights, 0.0).sum(axis=2)
    weights[:, outside] = 0.0
    return StencilSet(grid, weights, costs, dropped, has_cost=spec.running_cost is not None)


def apply(stencils: StencilSet, field, policy) -> DiscreteField:
    """Discrete generator ``L_alpha u`` under a per-node control choice."""
    u = field.values if isinstance(field, DiscreteField) else np.asarray(field, dtype=float)
    if u.shape != (stencils.grid.size,):
        raise ShapeMismatch(f"field has shape {u.shape}, grid has {stencils.grid.size} nodes")
    pol = _policy_array(policy, stencils.grid)
    vals = stencils.apply_all(u)
    return DiscreteField(stencils.grid, vals[pol, np.arange(u.size)])


def bellman_terms(stencils: StencilSet, u: np.ndarray) -> np.ndarray:
    """``-L_k u - l_k`` for every control, shape ``(K, N)``."""
    return -stencils.apply_all(u) - stencils.costs


def extract_feedback(stencils: StencilSet, field) -> FeedbackPolicy:
    """Per node, the first control index maximizing ``-L_k u - l_k``."""
    u = field.values if isinstance(field, DiscreteField) else np.asarray(field, dtype=float)
    return FeedbackPolicy(stencils.grid, np.argmax(bellman_terms(stencils, u), axis=0))
