"""
pyramid.py

Spatial pyramid cropping: average-pool a feature map onto several grid
resolutions and concatenate every cell into one node set for EMD.

Binning is adaptive: output cell i along an axis of length n covers input
positions [⌊i·n/g⌋, ⌈(i+1)·n/g⌉). The same rule with g > n replicates cells,
which the encoder uses to bring a small view's grid up to the shared grid.

Pooling is linear, so each level is a constant matrix acting on the flattened
node matrix; pyramid_operator stacks all levels. The training tape reuses
that matrix, so the pooled nodes and their gradients come from one source.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from config import DEFAULT_GRIDS
from tensors import FeatureMap, ShapeError, flatten

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PyramidSpec:
    grid_sizes: tuple[int, ...] = DEFAULT_GRIDS

    def __post_init__(self):
        sizes = tuple(int(g) for g in self.grid_sizes)
        if not sizes:
            raise ValueError("PyramidSpec needs at least one grid size.")
        if any(g < 1 for g in sizes):
            raise ValueError(f"Grid sizes must be >= 1, got {sizes}.")
        object.__setattr__(self, "grid_sizes", sizes)

    @property
    def n_nodes(self) -> int:
        return sum(g * g for g in self.grid_sizes)

    def validate_for(self, height: int, width: int) -> None:
        limit = min(height, width)
        too_big = [g for g in self.grid_sizes if g > limit]
        if too_big:
            raise ShapeError(
                f"Grid sizes {too_big} exceed the {height}×{width} feature map."
            )


@lru_cache(maxsize=64)
def pool_matrix(n_in: int, g: int) -> np.ndarray:
    """(g, n_in) row-stochastic matrix averaging adaptive bins along one axis."""
    if n_in < 1 or g < 1:
        raise ValueError(f"pool_matrix needs positive sizes, got n_in={n_in}, g={g}.")
    A = np.zeros((g, n_in), dtype=np.float64)
    for i in range(g):
        start = (i * n_in) // g
        end = -((-(i + 1) * n_in) // g)
        A[i, start:end] = 1.0 / (end - start)
    A.flags.writeable = False
    return A


@lru_cache(maxsize=64)
def grid_operator(height: int, width: int, g: int) -> np.ndarray:
    """(g², H·W) operator pooling row-major nodes onto a g×g grid."""
    op = np.kron(pool_matrix(height, g), pool_matrix(width, g))
    op.flags.writeable = False
    return op


@lru_cache(maxsize=64)
def _stacked_operator(height: int, width: int, grid_sizes: tuple[int, ...]) -> np.ndarray:
    op = np.vstack([grid_operator(height, width, g) for g in grid_sizes])
    op.flags.writeable = False
    return op


def pyramid_operator(height: int, width: int, spec: PyramidSpec) -> np.ndarray:
    """(Σg², H·W) operator producing every pyramid node, levels in spec order."""
    spec.validate_for(height, width)
    return _stacked_operator(height, width, spec.grid_sizes)


def adaptive_pool(fmap: FeatureMap, g: int) -> FeatureMap:
    """Average-pool an H×W×C map onto a g×g grid (1 ≤ g ≤ min(H, W))."""
    if not 1 <= g <= min(fmap.height, fmap.width):
        raise ShapeError(
            f"Grid size {g} out of range for a {fmap.height}×{fmap.width} map."
        )
    pooled = grid_operator(fmap.height, fmap.width, g) @ flatten(fmap)
    return FeatureMap(pooled.reshape(g, g, fmap.channels))


def pyramid_nodes(fmap: FeatureMap, spec: PyramidSpec) -> np.ndarray:
    """Concatenated pooled nodes, Σg² rows, grids in spec order, row-major within."""
    return pyramid_operator(fmap.height, fmap.width, spec) @ flatten(fmap)
