"""Counter-based random streams keyed by (seed, step).

Each time step opens a fresh Philox counter block and draws path variates in
path order, so path ``i`` sees the same noise whenever at least ``i + 1``
paths are drawn: its increments do not depend on how many paths run or which
of them are still alive.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
NORMAL_STREAM = 0
UNIFORM_STREAM = 1


def _generator(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=int(seed) & _MASK64, counter=[0, 0, int(step), int(stream)]))


def normals(seed: int, step: int, n_paths: int, dim: int) -> np.ndarray:
    """Standard Gaussians of shape ``(n_paths, dim)``."""
    return _generator(seed, step, NORMAL_STREAM).standard_normal((n_paths, dim))


def uniforms(seed: int, block: int, n_paths: int) -> np.ndarray:
    """One uniform in ``[0, 1)`` per path for a given block index."""
    return _generator(seed, block, UNIFORM_STREAM).random(n_paths)
