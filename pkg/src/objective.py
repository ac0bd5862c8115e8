"""
objective.py

Symmetric Self-EMD training objective built on the autograd tape.

For one image with views a, b (and optionally a small view s):

    q(a)→k(b), q(b)→k(a)              always
    q(s)→k(a), q(s)→k(b)              when the small view is enabled

Each direction contributes EMD(query nodes, key nodes) + mix·vector loss.
Query branches live on the tape; key branches are evaluated with
requires_grad=False leaves and enter the loss as constants (stop-gradient).

Transport plans are solved on the forward values and then held constant:
the EMD term on the tape is 2 − 2·Σ π ⊙ (1 − M), so its gradient reaches the
query nodes only through M. Plans can be passed back in, which lets a finite
difference check perturb parameters while keeping π fixed.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from autograd import Tensor, normalize_rows
from emd_loss import solve_plan
from encoder import BranchOutput, forward_tape
from ot_solver import SinkhornConfig
from pyramid import PyramidSpec, pyramid_operator
from tensors import normalize_rows as normalize_nodes

logger = logging.getLogger(__name__)

OBJECTIVES = ("emd", "byol")


@dataclass
class ObjectiveResult:
    loss: Tensor
    components: dict[str, float]
    plans: list[np.ndarray]
    query_leaves: dict[str, Tensor]
    key_leaves: dict[str, Tensor]


@dataclass
class _Direction:
    label: str
    query: BranchOutput
    key: BranchOutput
    query_anchor: np.ndarray     # key-branch vector of the query's own view
    key_anchor: np.ndarray       # key-branch vector of the key's view


@dataclass
class ObjectiveSettings:
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    pyramid: Optional[PyramidSpec] = field(default_factory=PyramidSpec)
    marginals: str = "vector"
    objective: str = "emd"
    loss_mix: float = 1.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"Unknown objective '{self.objective}'. Choose from {OBJECTIVES}.")


def tape_emd_term(
    query_nodes: Tensor, key_nodes: np.ndarray, plan: np.ndarray
) -> Tensor:
    """2 − 2·⟨π, 1 − M⟩ with M = 1 − cos(query_i, key_j) and π constant."""
    similarity = normalize_rows(query_nodes) @ normalize_nodes(key_nodes).T
    cost = 1.0 - similarity
    return 2.0 - 2.0 * (Tensor(plan) * (1.0 - cost)).sum()


def tape_vector_term(query_vec: Tensor, key_vec: np.ndarray) -> Tensor:
    """2 − 2·cos(p, z′) with z′ constant."""
    p = normalize_rows(query_vec)
    z = normalize_nodes(key_vec.reshape(1, -1))
    return 2.0 - 2.0 * (p * z).sum()


def _pyramid_nodes(nodes: Tensor | np.ndarray, grid: int, spec: Optional[PyramidSpec]):
    if spec is None:
        return nodes
    return pyramid_operator(grid, grid, spec) @ nodes


def symmetric_objective(
    q_leaves: dict[str, Tensor],
    k_leaves: dict[str, Tensor],
    views: list[np.ndarray],
    settings: ObjectiveSettings,
    grid: int,
    plans: Optional[list[np.ndarray]] = None,
) -> ObjectiveResult:
    """
    Total loss for one image. `views` is [a, b] or [a, b, s].

    q_leaves should require gradients, k_leaves must not. Components are
    keyed emd_ab, emd_ba, vec_ab, vec_ba and, with a small view, emd_sa,
    emd_sb, vec_sa, vec_sb.
    """
    if len(views) not in (2, 3):
        raise ValueError(f"Expected 2 or 3 views, got {len(views)}.")
    if any(leaf.requires_grad for leaf in k_leaves.values()):
        raise ValueError("Key-branch leaves must not require gradients.")

    names = ["a", "b", "s"][: len(views)]
    query = {n: forward_tape(q_leaves, v, use_predictor=True, grid=grid) for n, v in zip(names, views)}
    key = {n: forward_tape(k_leaves, v, use_predictor=False, grid=grid) for n, v in zip(names, views)}
    key_vec = {n: key[n].vector.data.ravel() for n in names}

    pairs = [("a", "b"), ("b", "a")]
    if "s" in names:
        pairs += [("s", "a"), ("s", "b")]
    directions = [
        _Direction(f"{qn}{kn}", query[qn], key[kn], key_vec[qn], key_vec[kn])
        for qn, kn in pairs
    ]

    total: Optional[Tensor] = None
    components: dict[str, float] = {}
    used_plans: list[np.ndarray] = []

    for idx, d in enumerate(directions):
        vec_term = tape_vector_term(d.query.vector, d.key.vector.data)
        term = settings.loss_mix * vec_term
        components[f"vec_{d.label}"] = float(vec_term.data)

        if settings.objective == "emd":
            x_nodes = _pyramid_nodes(d.query.nodes, grid, settings.pyramid)
            y_nodes = _pyramid_nodes(d.key.nodes.data, grid, settings.pyramid)
            if plans is not None:
                plan = plans[idx]
            else:
                solved, _, _, _ = solve_plan(
                    x_nodes.data,
                    y_nodes,
                    v_x=d.query_anchor,
                    v_y=d.key_anchor,
                    cfg=settings.sinkhorn,
                    marginals=settings.marginals,
                )
                plan = solved.data
            emd_term = tape_emd_term(x_nodes, y_nodes, plan)
            term = emd_term + term
            components[f"emd_{d.label}"] = float(emd_term.data)
            used_plans.append(plan)
        else:
            components[f"emd_{d.label}"] = 0.0

        total = term if total is None else total + term

    components["total"] = float(total.data)
    return ObjectiveResult(
        loss=total,
        components=components,
        plans=used_plans,
        query_leaves=q_leaves,
        key_leaves=k_leaves,
    )
