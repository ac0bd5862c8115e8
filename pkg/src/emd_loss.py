"""
emd_loss.py

Self-EMD loss between two feature maps, plus the vector BYOL loss and the
symmetric objective that combines them.

Per direction (query view → key view):
    1. M_ij = 1 − cos(x_i, y_j)
    2. r_i  = max(x_iᵀ v_y, 0),  c_j = max(y_jᵀ v_x, 0)   (floored, normalized)
    3. π    = sinkhorn(M, r, c)  or the exact oracle
    4. S    = ⟨π, 1 − M⟩
    5. L    = 2 − 2S ∈ [0, 4]

Marginal modes:
    vector   dot product with the other view's global embedding (default)
    mean     dot product with the mean node of the other set
    uniform  1/n per node

The plan is a constant for differentiation: gradients reach node features
only through M in S = ⟨π, 1 − M⟩ (see objective.py).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from config import EXACT_MAX_NODES, MARGINAL_FLOOR
from ot_solver import SinkhornConfig, exact_ot, sinkhorn
from pyramid import PyramidSpec, pyramid_nodes
from tensors import (
    CostMatrix,
    EmbeddingVector,
    FeatureMap,
    MarginalWeights,
    ShapeError,
    TransportPlan,
    cosine,
    flatten,
    normalize_rows,
)

logger = logging.getLogger(__name__)

MARGINAL_MODES = ("vector", "mean", "uniform")
SOLVERS = ("sinkhorn", "exact")

NodeSource = Union[FeatureMap, np.ndarray]


@dataclass(frozen=True)
class LossBreakdown:
    emd_loss: float
    byol_vector_loss: float
    total: float
    plan: TransportPlan
    cost: CostMatrix
    weights_r: MarginalWeights
    weights_c: MarginalWeights

    @property
    def similarity(self) -> float:
        return 1.0 - self.emd_loss / 2.0


@dataclass(frozen=True)
class ViewEmbedding:
    """Encoder outputs for one view: query (with predictor) and key branches."""

    query_map: FeatureMap
    query_vec: EmbeddingVector
    key_map: FeatureMap
    key_vec: EmbeddingVector


def _nodes(source: NodeSource) -> np.ndarray:
    if isinstance(source, FeatureMap):
        return flatten(source)
    arr = np.asarray(source, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"Node sets must be 2-dimensional, got shape {arr.shape}.")
    return arr


def _check_channels(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(
            f"{what}: channel dims differ ({a.shape[-1]} vs {b.shape[-1]})."
        )


# ── Cost and marginals ─────────────────────────────────────────────────────────

def cost_matrix(X: NodeSource, Y: NodeSource) -> CostMatrix:
    """M_ij = 1 − cos(x_i, y_j), clipped to [0, 2]."""
    xs = _nodes(X)
    ys = _nodes(Y)
    _check_channels(xs, ys, "cost_matrix")
    sim = normalize_rows(xs) @ normalize_rows(ys).T
    return CostMatrix(np.clip(1.0 - sim, 0.0, 2.0))


def _normalize_raw(raw: np.ndarray, label: str) -> MarginalWeights:
    if not np.any(raw > 0.0):
        logger.warning(f"All {label} marginal weights clamped to zero; using uniform weights.")
        return uniform_weights(raw.size)
    floored = raw + MARGINAL_FLOOR
    return MarginalWeights(floored / floored.sum())


def uniform_weights(n: int) -> MarginalWeights:
    if n < 1:
        raise ValueError(f"uniform_weights needs n >= 1, got {n}.")
    return MarginalWeights(np.full(n, 1.0 / n))


def marginal_weights(nodes: NodeSource, anchor) -> MarginalWeights:
    """r_i ∝ max(x_iᵀ·anchor, 0) + ε; uniform when every raw weight is zero."""
    xs = _nodes(nodes)
    a = np.asarray(anchor, dtype=np.float64).ravel()
    _check_channels(xs, a, "marginal_weights")
    return _normalize_raw(np.maximum(xs @ a, 0.0), "anchor")


def marginal_weights_deepemd(nodes_x: NodeSource, nodes_y: NodeSource) -> MarginalWeights:
    """r_i ∝ max(x_iᵀ·mean_j(y_j), 0) + ε; the mean-node weighting."""
    xs = _nodes(nodes_x)
    ys = _nodes(nodes_y)
    _check_channels(xs, ys, "marginal_weights_deepemd")
    return _normalize_raw(np.maximum(xs @ ys.mean(axis=0), 0.0), "mean-node")


def _pick_weights(
    xs: np.ndarray, ys: np.ndarray, anchor, mode: str
) -> MarginalWeights:
    if mode == "vector":
        return marginal_weights(xs, anchor)
    if mode == "mean":
        return marginal_weights_deepemd(xs, ys)
    if mode == "uniform":
        return uniform_weights(xs.shape[0])
    raise ValueError(f"Unknown marginal mode '{mode}'. Choose from {MARGINAL_MODES}.")


# ── Plan and scores ────────────────────────────────────────────────────────────

def similarity_score(plan, M) -> float:
    """S = ⟨π, 1 − M⟩."""
    p = np.asarray(plan, dtype=np.float64)
    cost = np.asarray(M, dtype=np.float64)
    if p.shape != cost.shape:
        raise ShapeError(f"Plan shape {p.shape} does not match cost shape {cost.shape}.")
    return float(np.sum(p * (1.0 - cost)))


def solve_plan(
    X: NodeSource,
    Y: NodeSource,
    v_x,
    v_y,
    cfg: Optional[SinkhornConfig] = None,
    marginals: str = "vector",
    solver: str = "sinkhorn",
) -> tuple[TransportPlan, CostMatrix, MarginalWeights, MarginalWeights]:
    """Cost matrix, marginals and transport plan for one pair of node sets."""
    xs = _nodes(X)
    ys = _nodes(Y)
    _check_channels(xs, ys, "emd_loss")

    M = cost_matrix(xs, ys)
    r = _pick_weights(xs, ys, v_y, marginals)
    c = _pick_weights(ys, xs, v_x, marginals)

    if solver == "sinkhorn":
        plan = sinkhorn(M, r, c, cfg)
    elif solver == "exact":
        data, _ = exact_ot(M, r, c, max_size=EXACT_MAX_NODES)
        plan = TransportPlan(data)
    else:
        raise ValueError(f"Unknown solver '{solver}'. Choose from {SOLVERS}.")
    return plan, M, r, c


def emd_loss(
    X: NodeSource,
    Y: NodeSource,
    v_x,
    v_y,
    cfg: Optional[SinkhornConfig] = None,
    pyramid: Optional[PyramidSpec] = None,
    marginals: str = "vector",
    solver: str = "sinkhorn",
) -> LossBreakdown:
    """
    L_EMD = 2 − 2·S(X, Y).

    X and Y may be feature maps or node matrices; their node counts may
    differ. With a pyramid spec both maps are expanded into pyramid nodes
    first (feature maps only).
    """
    if pyramid is not None:
        if not (isinstance(X, FeatureMap) and isinstance(Y, FeatureMap)):
            raise TypeError("Pyramid node sets require FeatureMap inputs.")
        X = pyramid_nodes(X, pyramid)
        Y = pyramid_nodes(Y, pyramid)

    plan, M, r, c = solve_plan(X, Y, v_x, v_y, cfg, marginals, solver)
    S = similarity_score(plan, M)
    # Rounding can push 2 − 2S a few ulps outside [0, 4].
    loss = min(4.0, max(0.0, 2.0 - 2.0 * S))
    return LossBreakdown(
        emd_loss=loss,
        byol_vector_loss=0.0,
        total=loss,
        plan=plan,
        cost=M,
        weights_r=r,
        weights_c=c,
    )


def byol_vector_loss(p, z) -> float:
    """2 − 2·cos(p, z′) ∈ [0, 4]."""
    return 2.0 - 2.0 * cosine(p, z)


def directional_loss(
    query: ViewEmbedding,
    key: ViewEmbedding,
    cfg: Optional[SinkhornConfig] = None,
    pyramid: Optional[PyramidSpec] = None,
    marginals: str = "vector",
    solver: str = "sinkhorn",
    loss_mix: float = 1.0,
) -> LossBreakdown:
    """
    One direction of the symmetric objective: query branch of one view
    against the key branch of the other.

    Anchors are key-branch vectors of the opposite view for each node set:
    the query view's nodes are weighted by the key view's vector and the key
    view's nodes by the query view's key-branch vector.
    """
    emd = emd_loss(
        query.query_map,
        key.key_map,
        v_x=query.key_vec,
        v_y=key.key_vec,
        cfg=cfg,
        pyramid=pyramid,
        marginals=marginals,
        solver=solver,
    )
    vec = byol_vector_loss(query.query_vec, key.key_vec)
    return LossBreakdown(
        emd_loss=emd.emd_loss,
        byol_vector_loss=vec,
        total=emd.emd_loss + loss_mix * vec,
        plan=emd.plan,
        cost=emd.cost,
        weights_r=emd.weights_r,
        weights_c=emd.weights_c,
    )


def symmetric_total_loss(
    view_a: ViewEmbedding,
    view_b: ViewEmbedding,
    cfg: Optional[SinkhornConfig] = None,
    pyramid: Optional[PyramidSpec] = None,
    marginals: str = "vector",
    solver: str = "sinkhorn",
    loss_mix: float = 1.0,
) -> tuple[LossBreakdown, LossBreakdown]:
    """(a→b, b→a) breakdowns; the objective is the sum of both totals."""
    ab = directional_loss(view_a, view_b, cfg, pyramid, marginals, solver, loss_mix)
    ba = directional_loss(view_b, view_a, cfg, pyramid, marginals, solver, loss_mix)
    return ab, ba
