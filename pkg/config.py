import os
from dotenv import load_dotenv

load_dotenv()

# ── Logging ────────────────────────────────────────────────────────────────────
LOG_LEVEL: str = os.getenv("SEMD_LOG_LEVEL", "INFO").upper()
if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR"):
    raise ValueError(
        f"Invalid SEMD_LOG_LEVEL value: '{LOG_LEVEL}'. "
        "Must be one of DEBUG, INFO, WARNING, ERROR."
    )

# ── Sinkhorn ───────────────────────────────────────────────────────────────────
# Regularization intensity λ. Cost lives in [0, 2], so λ·M ≤ 2λ.
DEFAULT_LAMBDA: float = float(os.getenv("SEMD_LAMBDA", "25"))
if DEFAULT_LAMBDA <= 0:
    raise ValueError(f"SEMD_LAMBDA must be positive, got {DEFAULT_LAMBDA}.")

# Alternating row/column updates per solve (T).
DEFAULT_ITERATIONS: int = int(os.getenv("SEMD_ITERATIONS", "10"))
if DEFAULT_ITERATIONS < 1:
    raise ValueError(f"SEMD_ITERATIONS must be >= 1, got {DEFAULT_ITERATIONS}.")

# exp(−λM) is clamped to this floor so the kernel stays strictly positive.
KERNEL_FLOOR = 1e-300

# Added to every raw marginal weight before normalization.
MARGINAL_FLOOR = 1e-8

# |Σr − 1| above this is rejected as infeasible.
MARGINAL_SUM_TOL = 1e-9

# First λ of the doubling schedule used by sinkhorn_annealed.
ANNEAL_START_LAMBDA = 12.5

# Converged solves (oracle check, exact-bound tests): per-stage iteration cap
# and the row-violation exit threshold.
CONVERGED_MAX_ITERATIONS = 100_000
CONVERGED_TOLERANCE = 1e-9

# ── Exact solver ───────────────────────────────────────────────────────────────
# exact_ot is a desk-scale oracle. The raw oracle refuses anything larger than
# ORACLE_MAX_SIZE per side; --exact loss evaluation on whole feature maps
# (49 or 83 nodes) uses the wider EXACT_MAX_NODES limit.
ORACLE_MAX_SIZE = 12
EXACT_MAX_NODES: int = int(os.getenv("SEMD_EXACT_MAX_NODES", "128"))

# Pivot cap for the transportation simplex.
SIMPLEX_MAX_PIVOTS = 50_000

# ── Geometry ───────────────────────────────────────────────────────────────────
# Quarter-scale 224/112 views and the 7×7 stride-32 grid.
IMAGE_SIZE = 64
VIEW_SIZE = 56
SMALL_VIEW_SCALE = 0.5
FEATURE_GRID = 7
DEFAULT_GRIDS = (7, 5, 3)

# ── Training defaults ──────────────────────────────────────────────────────────
DEFAULT_MOMENTUM = 0.99
DEFAULT_LR = 0.05
DEFAULT_WARMUP_STEPS = 20
DEFAULT_BATCH = 8
DEFAULT_STEPS = 200
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_DATASET_SIZE = 64

# Progress log interval during training, in steps.
LOG_EVERY: int = int(os.getenv("SEMD_LOG_EVERY", "20"))

# ── Directories ────────────────────────────────────────────────────────────────
OUTPUT_DIR: str = os.getenv(
    "SEMD_OUTPUT_DIR", os.path.join(os.path.dirname(__file__), "output")
)
