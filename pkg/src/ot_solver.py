"""
ot_solver.py

Discrete optimal transport between two weighted node sets.

Two solvers:
    sinkhorn  entropic-regularized OT via Sinkhorn-Knopp scaling. The
              production path used by the loss.
    exact_ot  transportation simplex (northwest-corner start, MODI/u-v
              duals, stepping-stone pivots). A desk-scale test oracle.

Sinkhorn update order (fixed):
    v ← r / (P u)        rows
    u ← c / (Pᵀ v)       columns
    π = diag(v) P diag(u)

Ending on the column update means column sums equal c on exit; row sums
converge to r as T grows. Marginals must already sum to 1; normalization
belongs to the caller (emd_loss), never to the solver.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import (
    ANNEAL_START_LAMBDA,
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA,
    KERNEL_FLOOR,
    MARGINAL_SUM_TOL,
    ORACLE_MAX_SIZE,
    SIMPLEX_MAX_PIVOTS,
)
from tensors import ShapeError, TransportPlan

logger = logging.getLogger(__name__)


class MarginalError(ValueError):
    """Marginals are negative or do not sum to 1, so U(r, c) is empty."""

    code = "MARGINALS_INFEASIBLE"


class OracleSizeError(ValueError):
    """Problem too large for the exact oracle."""

    code = "ORACLE_TOO_LARGE"


@dataclass(frozen=True)
class SinkhornConfig:
    lambda_: float = DEFAULT_LAMBDA
    iterations: int = DEFAULT_ITERATIONS
    kernel_floor: float = KERNEL_FLOOR
    tolerance: Optional[float] = None   # early exit on max row violation

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValueError(f"lambda must be positive, got {self.lambda_}.")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}.")
        if not 0.0 < self.kernel_floor < 1.0:
            raise ValueError(f"kernel_floor must be in (0, 1), got {self.kernel_floor}.")
        if self.tolerance is not None and self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}.")


# ── Input checks ───────────────────────────────────────────────────────────────

def _cost_array(M) -> np.ndarray:
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"Cost matrix must be 2-dimensional, got shape {arr.shape}.")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Cost matrix contains NaN or Inf entries.")
    return arr


def _marginal_array(w, n: int, name: str) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64).ravel()
    if arr.size != n:
        raise ShapeError(f"Marginal {name} has {arr.size} entries, cost matrix needs {n}.")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise MarginalError(f"Marginal {name} must be finite and nonnegative.")
    total = float(arr.sum())
    if abs(total - 1.0) > MARGINAL_SUM_TOL:
        raise MarginalError(
            f"Marginal {name} sums to {total!r}; normalize to 1 before solving."
        )
    return arr


# ── Sinkhorn ───────────────────────────────────────────────────────────────────

def kernel(M, lambda_: float, kernel_floor: float = KERNEL_FLOOR) -> np.ndarray:
    """P = max(exp(−λM), floor), element-wise."""
    if not lambda_ > 0:
        raise ValueError(f"lambda must be positive, got {lambda_}.")
    cost = _cost_array(M)
    return np.maximum(np.exp(-lambda_ * cost), kernel_floor)


def sinkhorn(
    M,
    r,
    c,
    cfg: Optional[SinkhornConfig] = None,
    init_col_scaling: Optional[np.ndarray] = None,
) -> TransportPlan:
    """
    Entropic OT plan for cost M and marginals r (rows), c (columns).

    Runs cfg.iterations alternating updates, or fewer when cfg.tolerance is
    set and the row violation drops below it. init_col_scaling seeds u
    (default all ones).
    """
    cfg = cfg or SinkhornConfig()
    cost = _cost_array(M)
    n, m = cost.shape
    rows = _marginal_array(r, n, "r")
    cols = _marginal_array(c, m, "c")

    P = kernel(cost, cfg.lambda_, cfg.kernel_floor)
    if init_col_scaling is None:
        u = np.ones(m, dtype=np.float64)
    else:
        u = np.asarray(init_col_scaling, dtype=np.float64).ravel()
        if u.size != m:
            raise ShapeError(f"init_col_scaling has {u.size} entries, cost matrix needs {m}.")
    v = np.ones(n, dtype=np.float64)

    done = 0
    for t in range(cfg.iterations):
        v = rows / (P @ u)
        u = cols / (P.T @ v)
        done = t + 1
        if cfg.tolerance is not None:
            violation = float(np.max(np.abs(v * (P @ u) - rows)))
            if violation < cfg.tolerance:
                logger.debug(f"Sinkhorn converged after {done} iteration(s) ({violation:.2e}).")
                break

    plan = v[:, None] * P * u[None, :]
    return TransportPlan(plan, row_scaling=v, col_scaling=u, iterations=done)


def _centered_log(u: np.ndarray) -> np.ndarray:
    """log u shifted so its positive entries straddle zero; zero entries stay −inf."""
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
    finite = np.isfinite(log_u)
    if finite.any():
        log_u[finite] -= 0.5 * (log_u[finite].max() + log_u[finite].min())
    return log_u


def sinkhorn_annealed(
    M,
    r,
    c,
    cfg: Optional[SinkhornConfig] = None,
    start_lambda: float = ANNEAL_START_LAMBDA,
) -> TransportPlan:
    """
    Sinkhorn at cfg.lambda_, warm-started from a doubling λ schedule.

    Each stage runs up to cfg.iterations updates (with cfg.tolerance) and
    hands its column scaling to the next: u ↦ u^(λ_next/λ), i.e. the same
    dual potential at the sharper kernel. The reported iteration count sums
    all stages.
    """
    cfg = cfg or SinkhornConfig()
    if not start_lambda > 0:
        raise ValueError(f"start_lambda must be positive, got {start_lambda}.")
    schedule = []
    lam = min(start_lambda, cfg.lambda_)
    while lam < cfg.lambda_:
        schedule.append(lam)
        lam *= 2.0
    schedule.append(cfg.lambda_)

    u = None
    previous = None
    total = 0
    plan = None
    for lam in schedule:
        if plan is not None:
            u = np.exp(_centered_log(np.asarray(plan.col_scaling)) * (lam / previous))
        stage = SinkhornConfig(lam, cfg.iterations, cfg.kernel_floor, cfg.tolerance)
        plan = sinkhorn(M, r, c, stage, init_col_scaling=u)
        total += plan.iterations
        previous = lam

    logger.debug(f"Annealed Sinkhorn: {len(schedule)} stage(s), {total} iteration(s).")
    return TransportPlan(
        plan.data, row_scaling=plan.row_scaling, col_scaling=plan.col_scaling, iterations=total
    )


def transport_cost(plan, M) -> float:
    """Frobenius product ⟨π, M⟩."""
    p = np.asarray(plan, dtype=np.float64)
    cost = _cost_array(M)
    if p.shape != cost.shape:
        raise ShapeError(f"Plan shape {p.shape} does not match cost shape {cost.shape}.")
    return float(np.sum(p * cost))


def marginal_violation(plan, r, c) -> tuple[float, float]:
    """Max absolute row and column marginal violations of a plan."""
    p = np.asarray(plan, dtype=np.float64)
    rows = np.asarray(r, dtype=np.float64).ravel()
    cols = np.asarray(c, dtype=np.float64).ravel()
    if p.shape != (rows.size, cols.size):
        raise ShapeError(
            f"Plan shape {p.shape} does not match marginals ({rows.size}, {cols.size})."
        )
    row_v = float(np.max(np.abs(p.sum(axis=1) - rows)))
    col_v = float(np.max(np.abs(p.sum(axis=0) - cols)))
    return row_v, col_v


# ── Transportation simplex ─────────────────────────────────────────────────────

_SIMPLEX_TOL = 1e-12


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """
    Initial basic feasible solution with exactly n+m−1 basic cells.

    When a row and a column run out together, only the row index advances;
    the next cell then enters the basis with zero flow so the basis stays a
    spanning tree.
    """
    n, m = supply.size, demand.size
    a = supply.copy()
    b = demand.copy()
    plan = np.zeros((n, m), dtype=np.float64)
    basis: list[tuple[int, int]] = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        plan[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (i < n - 1 and a[i] <= _SIMPLEX_TOL):
            i += 1
        else:
            j += 1
    return plan, basis


def _duals(cost: np.ndarray, basis: list[tuple[int, int]]):
    """Solve u_i + v_j = C_ij over the basic cells (u_0 = 0)."""
    n, m = cost.shape
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    by_row: dict[int, list[int]] = {}
    by_col: dict[int, list[int]] = {}
    for i, j in basis:
        by_row.setdefault(i, []).append(j)
        by_col.setdefault(j, []).append(i)

    stack: list[tuple[str, int]] = [("r", 0)]
    while stack:
        kind, idx = stack.pop()
        if kind == "r":
            for j in by_row.get(idx, []):
                if np.isnan(v[j]):
                    v[j] = cost[idx, j] - u[idx]
                    stack.append(("c", j))
        else:
            for i in by_col.get(idx, []):
                if np.isnan(u[i]):
                    u[i] = cost[i, idx] - v[idx]
                    stack.append(("r", i))
    return u, v


def _tree_path(basis: list[tuple[int, int]], row: int, col: int) -> list[tuple[int, int]]:
    """Basic cells on the unique tree path from row node `row` to column node `col`."""
    adjacency: dict[tuple[str, int], list[tuple[tuple[str, int], tuple[int, int]]]] = {}
    for i, j in basis:
        adjacency.setdefault(("r", i), []).append((("c", j), (i, j)))
        adjacency.setdefault(("c", j), []).append((("r", i), (i, j)))

    start, goal = ("r", row), ("c", col)
    parent: dict[tuple[str, int], tuple[tuple[str, int], tuple[int, int]]] = {}
    seen = {start}
    frontier = [start]
    while frontier and goal not in seen:
        nxt = []
        for node in frontier:
            for neighbour, cell in adjacency.get(node, []):
                if neighbour not in seen:
                    seen.add(neighbour)
                    parent[neighbour] = (node, cell)
                    nxt.append(neighbour)
        frontier = nxt

    path: list[tuple[int, int]] = []
    node = goal
    while node != start:
        node, cell = parent[node]
        path.append(cell)
    path.reverse()
    return path


def exact_ot(M, r, c, max_size: Optional[int] = ORACLE_MAX_SIZE) -> tuple[np.ndarray, float]:
    """
    Exact optimal plan and cost min ⟨π, M⟩ over U(r, c).

    Entering cells follow Bland's rule (first negative reduced cost in
    row-major order) and ties on the leaving cell go to the lowest index,
    so degenerate pivots cannot cycle.
    """
    cost = _cost_array(M)
    n, m = cost.shape
    if max_size is not None and max(n, m) > max_size:
        raise OracleSizeError(
            f"exact_ot is limited to {max_size}×{max_size}, got {n}×{m}."
        )
    rows = _marginal_array(r, n, "r")
    cols = _marginal_array(c, m, "c")
    # Absorb rounding so both sides carry exactly the same total mass.
    cols = cols * (rows.sum() / cols.sum())

    plan, basis = _northwest_corner(rows, cols)
    basis_set = set(basis)

    for pivot in range(SIMPLEX_MAX_PIVOTS):
        u, v = _duals(cost, basis)
        reduced = cost - u[:, None] - v[None, :]
        entering = None
        for i, j in zip(*np.nonzero(reduced < -_SIMPLEX_TOL)):
            if (int(i), int(j)) not in basis_set:
                entering = (int(i), int(j))
                break
        if entering is None:
            logger.debug(f"Transportation simplex optimal after {pivot} pivot(s).")
            break

        ei, ej = entering
        # Cycle: entering (+), then alternate −/+ along the tree path from
        # column ej back to row ei.
        path = _tree_path(basis, ei, ej)
        path.reverse()
        minus_cells = path[0::2]
        plus_cells = path[1::2]
        theta = min(plan[cell] for cell in minus_cells)
        leaving = min(
            (cell for cell in minus_cells if plan[cell] <= theta + _SIMPLEX_TOL),
            key=lambda cell: cell[0] * m + cell[1],
        )

        plan[ei, ej] += theta
        for cell in minus_cells:
            plan[cell] -= theta
        for cell in plus_cells:
            plan[cell] += theta
        plan[leaving] = 0.0

        basis.remove(leaving)
        basis_set.discard(leaving)
        basis.append(entering)
        basis_set.add(entering)
    else:
        raise RuntimeError(
            f"Transportation simplex did not converge within {SIMPLEX_MAX_PIVOTS} pivots."
        )

    np.maximum(plan, 0.0, out=plan)
    return plan, float(np.sum(plan * cost))


def permutation_oracle(M) -> float:
    """
    Brute-force uniform-marginal EMD: (1/n)·min_σ Σ_i M[i, σ(i)].

    The uniform polytope's vertices are the scaled permutation matrices, so
    this equals exact_ot with uniform marginals. Square, n ≤ 8 only.
    """
    cost = _cost_array(M)
    n, m = cost.shape
    if n != m:
        raise ShapeError(f"permutation_oracle needs a square matrix, got {n}×{m}.")
    if n > 8:
        raise OracleSizeError(f"permutation_oracle is limited to 8×8, got {n}×{n}.")
    rows = np.arange(n)
    best = min(
        float(np.sum(cost[rows, list(perm)])) for perm in itertools.permutations(range(n))
    )
    return best / n
