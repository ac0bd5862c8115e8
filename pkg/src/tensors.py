"""
tensors.py

Validated numeric containers shared by every other module.

    FeatureMap       H×W×C grid, the spatial embedding of one view
    EmbeddingVector  length-C global vector from the parallel head
    CostMatrix       n×m transport costs
    MarginalWeights  nonnegative supply/demand masses with unit sum
    TransportPlan    n×m plan plus the Sinkhorn scaling vectors

All containers hold float64 arrays that are frozen (writeable=False) after
construction, so they can be shared freely. Each one implements __array__,
so solver code calls np.asarray() on either a container or a plain array.

Node order is row-major: node i = h·W + w.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import MARGINAL_SUM_TOL

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Operand dimensions do not line up."""

    code = "SHAPE_MISMATCH"


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}.")
    if arr.size == 0:
        raise ShapeError(f"{name} must not be empty.")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries.")
    arr.flags.writeable = False
    return arr


class _ArrayBacked:
    data: np.ndarray

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    @property
    def shape(self) -> tuple:
        return self.data.shape


# ── Containers ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FeatureMap(_ArrayBacked):
    data: np.ndarray    # (H, W, C)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 3, "FeatureMap"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_nodes(self) -> int:
        return self.height * self.width


@dataclass(frozen=True, eq=False)
class EmbeddingVector(_ArrayBacked):
    data: np.ndarray    # (C,)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 1, "EmbeddingVector"))

    @property
    def dim(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class CostMatrix(_ArrayBacked):
    data: np.ndarray    # (n_rows, n_cols)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 2, "CostMatrix"))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class MarginalWeights(_ArrayBacked):
    data: np.ndarray    # (n,)

    def __post_init__(self):
        arr = _frozen(self.data, 1, "MarginalWeights")
        if np.any(arr < 0):
            raise ValueError("MarginalWeights entries must be nonnegative.")
        total = float(arr.sum())
        if abs(total - 1.0) > MARGINAL_SUM_TOL:
            raise ValueError(f"MarginalWeights must sum to 1, got {total!r}.")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class TransportPlan(_ArrayBacked):
    data: np.ndarray                       # (n_rows, n_cols), π
    row_scaling: Optional[np.ndarray] = None   # v
    col_scaling: Optional[np.ndarray] = None   # u
    iterations: int = 0

    def __post_init__(self):
        arr = _frozen(self.data, 2, "TransportPlan")
        if np.any(arr < 0):
            raise ValueError("TransportPlan entries must be nonnegative.")
        object.__setattr__(self, "data", arr)
        for name in ("row_scaling", "col_scaling"):
            vec = getattr(self, name)
            if vec is not None:
                object.__setattr__(self, name, _frozen(vec, 1, name))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def mass(self) -> float:
        return float(self.data.sum())


# ── Elementary operations ──────────────────────────────────────────────────────

def flatten(fmap: FeatureMap) -> np.ndarray:
    """Return the HW×C node matrix of a feature map (a read-only view)."""
    return fmap.data.reshape(fmap.n_nodes, fmap.channels)


def unflatten(nodes, height: int, width: int) -> FeatureMap:
    """Inverse of flatten: rebuild an H×W×C map from row-major nodes."""
    arr = np.asarray(nodes, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != height * width:
        raise ShapeError(
            f"Cannot unflatten {arr.shape} nodes into a {height}×{width} grid."
        )
    return FeatureMap(arr.reshape(height, width, arr.shape[1]))


def cosine(x, y) -> float:
    """
    Cosine similarity xᵀy / (‖x‖‖y‖).

    A zero-norm operand yields 0.0 instead of NaN.
    """
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine operands differ in length: {a.size} vs {b.size}.")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(a @ b) / (na * nb)
    return min(1.0, max(-1.0, value))


def normalize_rows(nodes: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; zero rows stay zero."""
    arr = np.asarray(nodes, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, arr / safe, 0.0)
