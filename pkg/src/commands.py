"""
commands.py

Command implementations behind main.py. Each cmd_* function takes plain
arguments, writes any files atomically, prints its results to stdout as
key=value lines and returns the same values as a dict.

    cmd_emd             similarity and loss between two FMAP files
    cmd_heatmap         one row of the transport plan, reshaped to crop-2's grid
    cmd_sinkhorn_bench  entropic gap and marginal violation over (λ, T)
    cmd_oracle_check    Sinkhorn and permutation agreement with exact_ot
    cmd_train           toy training run → checkpoint + history CSV
    cmd_gen_synthetic   synthetic PNG corpus + manifest
"""

import logging
import os
import time
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from checkpoint import save_checkpoint
from config import CONVERGED_MAX_ITERATIONS, CONVERGED_TOLERANCE, OUTPUT_DIR
from emd_loss import emd_loss, solve_plan
from fmap_io import atomic_write, read_fmap, read_vector
from ot_solver import (
    SinkhornConfig,
    exact_ot,
    marginal_violation,
    permutation_oracle,
    sinkhorn,
    sinkhorn_annealed,
    transport_cost,
)
from pyramid import PyramidSpec
from run_config import load_run_config, to_train_config
from synthetic import generate_corpus, write_corpus
from tensors import MarginalWeights, ShapeError
from trainer import embedding_spread, smoothed_endpoints, train

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"
BENCH_COLUMNS = [
    "instance", "lambda", "iters", "transport_cost", "exact_cost",
    "gap", "row_violation", "col_violation",
]
# Heatmap solves run long with an early exit so exported rows are feasible.
HEATMAP_ITERATIONS = 1000
HEATMAP_TOLERANCE = 1e-12


def _emit(values: dict) -> dict:
    for key, value in values.items():
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}={value}")
    return values


def _write_csv(df: pd.DataFrame, path: str, **kwargs) -> None:
    atomic_write(path, df.to_csv(float_format=CSV_FLOAT_FORMAT, **kwargs).encode())


def _random_marginal(rng: np.random.Generator, n: int) -> MarginalWeights:
    w = rng.uniform(0.05, 1.0, size=n)
    w = w / w.sum()
    return MarginalWeights(w)


# ── emd ────────────────────────────────────────────────────────────────────────

def cmd_emd(
    fmap_a: str,
    fmap_b: str,
    vec_a: str,
    vec_b: str,
    grids: Optional[Sequence[int]] = None,
    lambda_: Optional[float] = None,
    iters: Optional[int] = None,
    marginals: str = "vector",
    exact: bool = False,
) -> dict:
    X, Y = read_fmap(fmap_a), read_fmap(fmap_b)
    v_x, v_y = read_vector(vec_a), read_vector(vec_b)
    if X.channels != Y.channels or v_x.dim != X.channels or v_y.dim != Y.channels:
        raise ShapeError(
            f"Channel mismatch: maps {X.channels}/{Y.channels}, vectors {v_x.dim}/{v_y.dim}."
        )

    defaults = SinkhornConfig()
    cfg = SinkhornConfig(
        lambda_=lambda_ if lambda_ is not None else defaults.lambda_,
        iterations=iters if iters is not None else defaults.iterations,
    )
    spec = PyramidSpec(tuple(grids)) if grids else None
    result = emd_loss(
        X, Y, v_x, v_y, cfg=cfg, pyramid=spec, marginals=marginals,
        solver="exact" if exact else "sinkhorn",
    )
    row_v, col_v = marginal_violation(result.plan, result.weights_r, result.weights_c)
    r, c = np.asarray(result.weights_r), np.asarray(result.weights_c)
    return _emit({
        "similarity": result.similarity,
        "emd_loss": result.emd_loss,
        "transport_cost": transport_cost(result.plan, result.cost),
        "solver": "exact" if exact else "sinkhorn",
        "lambda": cfg.lambda_,
        "iterations": result.plan.iterations if not exact else 0,
        "marginals": marginals,
        "nodes_a": result.cost.n_rows,
        "nodes_b": result.cost.n_cols,
        "r_min": float(r.min()),
        "r_max": float(r.max()),
        "c_min": float(c.min()),
        "c_max": float(c.max()),
        "row_violation": row_v,
        "col_violation": col_v,
    })


# ── heatmap ────────────────────────────────────────────────────────────────────

def cmd_heatmap(
    fmap_a: str,
    fmap_b: str,
    vec_a: str,
    vec_b: str,
    node_index: int,
    out_csv: str,
    lambda_: Optional[float] = None,
    iters: Optional[int] = None,
    marginals: str = "vector",
    exact: bool = False,
) -> dict:
    """Write π[node_index, :] as a crop-2 grid; rows sum to r[node_index]."""
    X, Y = read_fmap(fmap_a), read_fmap(fmap_b)
    v_x, v_y = read_vector(vec_a), read_vector(vec_b)
    if not 0 <= node_index < X.n_nodes:
        raise IndexError(f"node_index {node_index} out of range for {X.n_nodes} crop-1 nodes.")

    cfg = SinkhornConfig(
        lambda_=lambda_ if lambda_ is not None else SinkhornConfig().lambda_,
        iterations=iters if iters is not None else HEATMAP_ITERATIONS,
        tolerance=HEATMAP_TOLERANCE,
    )
    plan, _, r, _ = solve_plan(
        X, Y, v_x, v_y, cfg=cfg, marginals=marginals,
        solver="exact" if exact else "sinkhorn",
    )
    row = np.asarray(plan)[node_index]
    marginal = float(np.asarray(r)[node_index])
    mass = float(row.sum())
    if abs(mass - marginal) > 1e-9:
        logger.warning(
            f"Heatmap row {node_index} sums to {mass!r}, marginal is {marginal!r}; "
            f"raise --iters for a feasible row."
        )

    grid = pd.DataFrame(row.reshape(Y.height, Y.width))
    _write_csv(grid, out_csv, index=False, header=False)
    logger.info(f"Heatmap for node {node_index} written to {out_csv}")
    return _emit({
        "node_index": node_index,
        "row_mass": mass,
        "marginal": marginal,
        "peak_node": int(np.argmax(row)),
        "peak_fraction": float(row.max() / mass) if mass > 0 else 0.0,
        "out": out_csv,
    })


# ── sinkhorn-bench ─────────────────────────────────────────────────────────────

def sinkhorn_bench(
    size: int,
    lambdas: Sequence[float],
    iters_list: Sequence[int],
    seed: int = 0,
    instances: int = 5,
    timing: bool = False,
) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    rows = []
    for inst in range(instances):
        M = rng.uniform(0.0, 2.0, size=(size, size))
        r = _random_marginal(rng, size)
        c = _random_marginal(rng, size)
        _, exact_cost = exact_ot(M, r, c)
        for lam in lambdas:
            for T in iters_list:
                start = time.perf_counter()
                plan = sinkhorn(M, r, c, SinkhornConfig(lambda_=lam, iterations=T))
                elapsed = time.perf_counter() - start
                cost = transport_cost(plan, M)
                row_v, col_v = marginal_violation(plan, r, c)
                row = {
                    "instance": inst, "lambda": float(lam), "iters": int(T),
                    "transport_cost": cost, "exact_cost": exact_cost,
                    "gap": cost - exact_cost, "row_violation": row_v, "col_violation": col_v,
                }
                if timing:
                    row["seconds"] = elapsed
                rows.append(row)
    columns = BENCH_COLUMNS + (["seconds"] if timing else [])
    return pd.DataFrame(rows, columns=columns)


def cmd_sinkhorn_bench(
    size: int,
    lambdas: Sequence[float],
    iters_list: Sequence[int],
    seed: int,
    out_csv: str,
    instances: int = 5,
    timing: bool = False,
) -> dict:
    df = sinkhorn_bench(size, lambdas, iters_list, seed, instances, timing)
    _write_csv(df, out_csv, index=False)
    logger.info(f"Benchmark of {len(df)} row(s) written to {out_csv}")
    return _emit({
        "rows": len(df),
        "max_gap": float(df["gap"].abs().max()) if len(df) else 0.0,
        "max_row_violation": float(df["row_violation"].max()) if len(df) else 0.0,
        "out": out_csv,
    })


# ── oracle-check ───────────────────────────────────────────────────────────────

def cmd_oracle_check(
    instances: int = 100,
    max_n: int = 5,
    seed: int = 0,
    lambda_: float = 200.0,
    iters: int = CONVERGED_MAX_ITERATIONS,
    tolerance: float = 0.02,
    marginal_tolerance: float = CONVERGED_TOLERANCE,
) -> dict:
    """
    Sinkhorn vs exact_ot on random instances; exact_ot vs permutations for n ≤ 4.

    Sinkhorn runs annealed to λ with a row-violation exit at
    marginal_tolerance; iters caps each stage. A plan that hits the cap
    unconverged is counted in `unconverged` and still compared.
    """
    rng = np.random.default_rng(seed)
    cfg = SinkhornConfig(lambda_=lambda_, iterations=iters, tolerance=marginal_tolerance)
    sinkhorn_fail = perm_fail = perm_total = unconverged = 0
    worst_gap = worst_perm = 0.0

    for _ in range(instances):
        n, m = (int(k) for k in rng.integers(1, max_n + 1, size=2))
        M = rng.uniform(0.0, 2.0, size=(n, m))
        r, c = _random_marginal(rng, n), _random_marginal(rng, m)
        _, exact_cost = exact_ot(M, r, c)
        plan = sinkhorn_annealed(M, r, c, cfg)
        if marginal_violation(plan, r, c)[0] >= marginal_tolerance:
            unconverged += 1
        gap = abs(transport_cost(plan, M) - exact_cost)
        worst_gap = max(worst_gap, gap)
        if gap > tolerance:
            sinkhorn_fail += 1

        if n <= 4:
            square = rng.uniform(0.0, 2.0, size=(n, n))
            uniform = np.full(n, 1.0 / n)
            _, exact_uniform = exact_ot(square, uniform, uniform)
            diff = abs(exact_uniform - permutation_oracle(square))
            worst_perm = max(worst_perm, diff)
            perm_total += 1
            if diff > 1e-12:
                perm_fail += 1

    if sinkhorn_fail or perm_fail:
        logger.warning(
            f"Oracle check failures: sinkhorn {sinkhorn_fail}/{instances}, "
            f"permutation {perm_fail}/{perm_total}"
        )
    if unconverged:
        logger.warning(f"{unconverged}/{instances} Sinkhorn solve(s) hit the {iters}-iteration cap")
    return _emit({
        "instances": instances,
        "sinkhorn_failures": sinkhorn_fail,
        "worst_sinkhorn_gap": worst_gap,
        "unconverged": unconverged,
        "permutation_instances": perm_total,
        "permutation_failures": perm_fail,
        "worst_permutation_diff": worst_perm,
        "passed": not (sinkhorn_fail or perm_fail),
    })


# ── train ──────────────────────────────────────────────────────────────────────

def cmd_train(config_path: str, out_dir: Optional[str] = None, seed: Optional[int] = None) -> dict:
    rc = load_run_config(config_path)
    if seed is not None:
        rc = rc.model_copy(update={"seed": seed})
    cfg = to_train_config(rc)
    out_dir = out_dir or OUTPUT_DIR

    result = train(cfg)
    ckpt_path = os.path.join(out_dir, "checkpoint.semd")
    history_path = os.path.join(out_dir, "history.csv")
    save_checkpoint(ckpt_path, result.theta, result.xi)
    _write_csv(result.history, history_path, index=False)

    values = {"steps": cfg.steps, "checkpoint": ckpt_path, "history": history_path}
    if len(result.history):
        initial, final = smoothed_endpoints(result.history)
        values["initial_loss"] = initial
        values["final_loss"] = final
    probes = [img.pixels for img in generate_corpus(16, cfg.seed + 1)]
    spread = embedding_spread(result.theta, probes)
    values["embedding_spread"] = spread
    logger.info(f"Minimum per-dimension embedding std over probes: {spread:.3e}")
    return _emit(values)


# ── gen-synthetic ──────────────────────────────────────────────────────────────

def cmd_gen_synthetic(n: int, seed: int, out_dir: str) -> dict:
    paths = write_corpus(generate_corpus(n, seed), out_dir)
    return _emit({"images": len(paths), "out_dir": out_dir})
