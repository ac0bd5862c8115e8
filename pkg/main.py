"""
main.py

Command-line entry point for self-emd.

    python main.py emd A.fmap B.fmap VA.fmap VB.fmap [--exact] [--grids 7,5,3]
    python main.py heatmap A.fmap B.fmap VA.fmap VB.fmap --node 24 --out heat.csv
    python main.py sinkhorn-bench --size 8 --lambdas 5,25,100 --iters 1,10,100
    python main.py oracle-check [--instances 100]
    python main.py train --config run.cfg [--out output/]
    python main.py gen-synthetic --n 32 --out data/

Results go to stdout as key=value lines; logs go to stderr.

Exit codes:
    0  success
    1  internal error (or a failed oracle check)
    2  usage or validation error
"""

import argparse
import logging
import os
import sys

# Ensure src/ is on the path so all module imports resolve
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

import commands
from config import (
    CONVERGED_MAX_ITERATIONS,
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA,
    LOG_LEVEL,
    OUTPUT_DIR,
)
from emd_loss import MARGINAL_MODES


# ── Logging ────────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)


# ── Argument parsing ───────────────────────────────────────────────────────────

def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got '{text}'")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of numbers, got '{text}'")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("fmap_a", help="crop-1 feature map (FMAP)")
    p.add_argument("fmap_b", help="crop-2 feature map (FMAP)")
    p.add_argument("vec_a", help="crop-1 embedding vector (1×1×C FMAP)")
    p.add_argument("vec_b", help="crop-2 embedding vector (1×1×C FMAP)")
    p.add_argument("--exact", action="store_true", help="use the exact transportation simplex")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help=f"Sinkhorn regularization (default {DEFAULT_LAMBDA})")
    p.add_argument("--iters", type=int, default=None, help="Sinkhorn iterations")
    p.add_argument("--marginals", choices=MARGINAL_MODES, default="vector")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="self-emd", description="Self-EMD similarity and training tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("emd", help="similarity and EMD loss between two feature maps")
    _add_solver_flags(p)
    p.add_argument("--grids", type=_int_list, default=None, help="pyramid grid sizes, e.g. 7,5,3")

    p = sub.add_parser("heatmap", help="export one transport-plan row as a CSV grid")
    _add_solver_flags(p)
    p.add_argument("--node", dest="node_index", type=int, required=True)
    p.add_argument("--out", dest="out_csv", required=True)

    p = sub.add_parser("sinkhorn-bench", help="Sinkhorn gap and marginal violation vs exact OT")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--lambdas", type=_float_list, default=[DEFAULT_LAMBDA])
    p.add_argument("--lambda", dest="lambdas", type=lambda s: [float(s)])
    p.add_argument("--iters", type=_int_list, default=[DEFAULT_ITERATIONS])
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", action="store_true", help="add a wall-time column")
    p.add_argument("--out", dest="out_csv", default=os.path.join(OUTPUT_DIR, "sinkhorn_bench.csv"))

    p = sub.add_parser("oracle-check", help="cross-check Sinkhorn and exact OT on random instances")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--max-n", type=int, default=5)
    p.add_argument("--lambda", dest="lambda_", type=float, default=200.0)
    p.add_argument("--iters", type=int, default=CONVERGED_MAX_ITERATIONS,
                   help="iteration cap per λ stage (exits early at 1e-9 row violation)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="toy self-supervised training run")
    p.add_argument("--config", dest="config_path", required=True)
    p.add_argument("--out", dest="out_dir", default=OUTPUT_DIR)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("gen-synthetic", help="write a synthetic image corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_dir", required=True)
    return parser


# ── Dispatch ───────────────────────────────────────────────────────────────────

def run(args: argparse.Namespace) -> int:
    if args.command == "emd":
        commands.cmd_emd(args.fmap_a, args.fmap_b, args.vec_a, args.vec_b, grids=args.grids,
                         lambda_=args.lambda_, iters=args.iters, marginals=args.marginals,
                         exact=args.exact)
    elif args.command == "heatmap":
        commands.cmd_heatmap(args.fmap_a, args.fmap_b, args.vec_a, args.vec_b, args.node_index,
                             args.out_csv, lambda_=args.lambda_, iters=args.iters,
                             marginals=args.marginals, exact=args.exact)
    elif args.command == "sinkhorn-bench":
        commands.cmd_sinkhorn_bench(args.size, args.lambdas, args.iters, args.seed, args.out_csv,
                                    instances=args.instances, timing=args.timing)
    elif args.command == "oracle-check":
        report = commands.cmd_oracle_check(args.instances, args.max_n, args.seed,
                                           lambda_=args.lambda_, iters=args.iters)
        return 0 if report["passed"] else 1
    elif args.command == "train":
        commands.cmd_train(args.config_path, args.out_dir, seed=args.seed)
    elif args.command == "gen-synthetic":
        commands.cmd_gen_synthetic(args.n, args.seed, args.out_dir)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ValueError, IndexError, FileNotFoundError) as exc:
        code = getattr(exc, "code", "INVALID_INPUT")
        logger.error(f"{args.command} failed [{code}]: {exc}")
        return 2
    except Exception as exc:
        logger.error(f"{args.command} failed: {exc}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
