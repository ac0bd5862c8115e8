"""
encoder.py

Desk-scale query/key encoder with spatial and vector heads.

Topology (shared by query θ and key ξ):
    conv1  3→8    k3 s2 p1  ReLU
    conv2  8→16   k3 s2 p1  ReLU
    conv3  16→32  k3 s2 p1  ReLU        56×56 view → 7×7×32, 28×28 → 4×4×32
    projector     1×1 conv 32→16        spatial head (no global pooling)
    vector_head   global average + affine 32→16   parallel vector branch
    predictor     1×1 conv 16→16        query side only, applied to both heads

The projected map is resampled onto the shared FEATURE_GRID×FEATURE_GRID grid
with adaptive bins, so full and small views produce node sets of the same
size. Key parameters carry the predictor too (identical topology, EMA
tracked) but the key forward never uses it.
"""

import logging
from dataclasses import dataclass

import numpy as np

from autograd import Tensor, conv2d
from config import FEATURE_GRID
from pyramid import grid_operator
from tensors import EmbeddingVector, FeatureMap

logger = logging.getLogger(__name__)

# ── Topology ───────────────────────────────────────────────────────────────────
# Fixed parameter order; checkpoints and EMA walk this list.

_CONV_PLAN = [("conv1", 3, 8), ("conv2", 8, 16), ("conv3", 16, 32)]
KERNEL = 3
STRIDE = 2
PADDING = 1
EMBED_DIM = 16

PARAM_SHAPES: list[tuple[str, tuple[int, ...]]] = []
for _name, _cin, _cout in _CONV_PLAN:
    PARAM_SHAPES.append((f"{_name}.weight", (_cout, _cin, KERNEL, KERNEL)))
    PARAM_SHAPES.append((f"{_name}.bias", (_cout,)))
PARAM_SHAPES += [
    ("projector.weight", (EMBED_DIM, 32)),
    ("projector.bias", (EMBED_DIM,)),
    ("vector_head.weight", (EMBED_DIM, 32)),
    ("vector_head.bias", (EMBED_DIM,)),
    ("predictor.weight", (EMBED_DIM, EMBED_DIM)),
    ("predictor.bias", (EMBED_DIM,)),
]
PARAM_NAMES = [name for name, _ in PARAM_SHAPES]


@dataclass
class EncoderParams:
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = dict(PARAM_SHAPES)
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ValueError(f"Encoder topology mismatch (missing={missing}, extra={extra}).")
        for name, shape in PARAM_SHAPES:
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}.")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "EncoderParams":
        return EncoderParams({name: self.tensors[name].copy() for name in PARAM_NAMES})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[name].ravel() for name in PARAM_NAMES])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(self.tensors[name])) for name in PARAM_NAMES)

    @classmethod
    def zeros(cls) -> "EncoderParams":
        return cls({name: np.zeros(shape) for name, shape in PARAM_SHAPES})


@dataclass
class BranchOutput:
    """Tape outputs of one branch: (G·G, 16) node matrix and (1, 16) vector."""

    nodes: Tensor
    vector: Tensor
    native_grid: tuple[int, int]


def init_params(seed: int) -> EncoderParams:
    """He-normal convolutions, 1/√fan_in heads, zero biases."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in PARAM_SHAPES:
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 2.0 if name.startswith("conv") else 1.0
        tensors[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
    return EncoderParams(tensors)


def as_leaves(params: EncoderParams, requires_grad: bool) -> dict[str, Tensor]:
    return {name: Tensor(params[name], requires_grad=requires_grad) for name in PARAM_NAMES}


def forward_tape(
    leaves: dict[str, Tensor],
    view: np.ndarray,
    use_predictor: bool,
    grid: int = FEATURE_GRID,
) -> BranchOutput:
    h = Tensor(view)
    for name, _, _ in _CONV_PLAN:
        h = conv2d(h, leaves[f"{name}.weight"], leaves[f"{name}.bias"], STRIDE, PADDING).relu()

    gh, gw, channels = h.data.shape
    nodes = h.reshape(gh * gw, channels)
    pooled = nodes.mean_rows()

    z_nodes = nodes @ leaves["projector.weight"].T + leaves["projector.bias"]
    z_nodes = grid_operator(gh, gw, grid) @ z_nodes
    z_vec = pooled @ leaves["vector_head.weight"].T + leaves["vector_head.bias"]

    if use_predictor:
        w, b = leaves["predictor.weight"], leaves["predictor.bias"]
        z_nodes = z_nodes @ w.T + b
        z_vec = z_vec @ w.T + b
    return BranchOutput(nodes=z_nodes, vector=z_vec, native_grid=(gh, gw))


def forward(
    params: EncoderParams,
    view: np.ndarray,
    role: str = "query",
    grid: int = FEATURE_GRID,
) -> tuple[FeatureMap, EmbeddingVector]:
    """Plain evaluation: (grid×grid×16 feature map, 16-dim embedding)."""
    if role not in ("query", "key"):
        raise ValueError(f"role must be 'query' or 'key', got '{role}'.")
    out = forward_tape(as_leaves(params, False), view, role == "query", grid)
    fmap = FeatureMap(out.nodes.data.reshape(grid, grid, EMBED_DIM))
    return fmap, EmbeddingVector(out.vector.data.ravel())


def native_grid(size: int, layers: int = len(_CONV_PLAN)) -> int:
    """Spatial size after the stride plan, by convolution arithmetic."""
    for _ in range(layers):
        size = (size + 2 * PADDING - KERNEL) // STRIDE + 1
    return size


def ema_update(xi: EncoderParams, theta: EncoderParams, m: float) -> EncoderParams:
    """ξ ← m·ξ + (1 − m)·θ, element-wise."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"EMA momentum must be in [0, 1], got {m}.")
    if set(xi.tensors) != set(theta.tensors):
        raise ValueError("EMA update needs query and key encoders with the same topology.")
    return EncoderParams(
        {name: m * xi[name] + (1.0 - m) * theta[name] for name in PARAM_NAMES}
    )

