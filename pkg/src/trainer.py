"""
trainer.py

Desk-scale self-supervised training loop.

Per step:
    1. sample `batch` images from the corpus (with replacement)
    2. two augmented views per image (+ a small view when enabled)
    3. symmetric objective on the tape, averaged over the batch
    4. backward, check the key branch received nothing
    5. SGD with weight decay on θ at lr_at(step)
    6. ξ ← m·ξ + (1 − m)·θ

One numpy Generator seeded from TrainConfig.seed drives batch sampling and
every augmentation, and θ is initialized from the same seed, so a config
reproduces the whole history. Wall-clock timings are logged only and never
enter the history.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from augment import augment, small_view
from config import (
    DEFAULT_BATCH,
    DEFAULT_DATASET_SIZE,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_STEPS,
    DEFAULT_WARMUP_STEPS,
    DEFAULT_WEIGHT_DECAY,
    FEATURE_GRID,
    IMAGE_SIZE,
    LOG_EVERY,
    SMALL_VIEW_SCALE,
    VIEW_SIZE,
)
from emd_loss import MARGINAL_MODES
from encoder import PARAM_NAMES, EncoderParams, as_leaves, ema_update, forward, init_params
from objective import OBJECTIVES, ObjectiveSettings, symmetric_objective
from ot_solver import SinkhornConfig
from pyramid import PyramidSpec
from synthetic import SyntheticImage, generate_corpus

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "lr", "emd_ab", "emd_ba", "vec_ab", "vec_ba", "total"]


class DivergenceError(RuntimeError):
    code = "TRAINING_DIVERGED"


@dataclass
class TrainConfig:
    momentum: float = DEFAULT_MOMENTUM
    lr: float = DEFAULT_LR
    warmup_steps: int = DEFAULT_WARMUP_STEPS
    batch: int = DEFAULT_BATCH
    steps: int = DEFAULT_STEPS
    seed: int = 0
    loss_mix: float = 1.0
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    pyramid: Optional[PyramidSpec] = field(default_factory=PyramidSpec)
    small_view: bool = True
    small_view_scale: float = SMALL_VIEW_SCALE
    marginals: str = "vector"
    objective: str = "emd"
    dataset_size: int = DEFAULT_DATASET_SIZE

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must be in [0, 1], got {self.momentum}.")
        if self.lr < 0 or self.weight_decay < 0 or self.loss_mix < 0:
            raise ValueError("lr, weight_decay and loss_mix must be nonnegative.")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}.")
        if self.steps < 0 or self.warmup_steps < 0:
            raise ValueError("steps and warmup_steps must be >= 0.")
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}.")
        if self.small_view_scale != SMALL_VIEW_SCALE:
            raise ValueError(f"Only small_view_scale={SMALL_VIEW_SCALE} is supported.")
        if self.marginals not in MARGINAL_MODES:
            raise ValueError(f"Unknown marginal mode '{self.marginals}'.")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"Unknown objective '{self.objective}'.")

    def settings(self) -> ObjectiveSettings:
        return ObjectiveSettings(
            sinkhorn=self.sinkhorn,
            pyramid=self.pyramid,
            marginals=self.marginals,
            objective=self.objective,
            loss_mix=self.loss_mix,
        )


@dataclass
class TrainResult:
    theta: EncoderParams
    xi: EncoderParams
    initial_theta: EncoderParams
    history: pd.DataFrame


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay to 0 at cfg.steps."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _views(image: np.ndarray, rng: np.random.Generator, with_small: bool) -> list[np.ndarray]:
    views = [augment(image, rng), augment(image, rng)]
    if with_small:
        views.append(small_view(image, rng))
    return views


def _center_view(image: np.ndarray) -> np.ndarray:
    offset = (image.shape[0] - VIEW_SIZE) // 2
    return image[offset:offset + VIEW_SIZE, offset:offset + VIEW_SIZE, :]


def embedding_spread(params: EncoderParams, images: list[np.ndarray]) -> float:
    """Smallest per-dimension std of embedding vectors (no predictor) over centre-cropped probes."""
    if len(images) < 2:
        raise ValueError("embedding_spread needs at least two probe images.")
    vectors = np.stack([forward(params, _center_view(img), role="key")[1].data for img in images])
    return float(vectors.std(axis=0).min())


def train(cfg: TrainConfig, dataset: Optional[list[SyntheticImage]] = None) -> TrainResult:
    if dataset is None:
        dataset = generate_corpus(cfg.dataset_size, cfg.seed, IMAGE_SIZE)
    if not dataset:
        raise ValueError("Training needs a non-empty dataset.")

    rng = np.random.default_rng(cfg.seed)
    theta = init_params(cfg.seed)
    initial = theta.copy()
    xi = theta.copy()
    settings = cfg.settings()
    rows: list[dict] = []

    logger.info(
        f"Training {cfg.steps} step(s), batch {cfg.batch}, objective={cfg.objective}, "
        f"marginals={cfg.marginals}, small_view={cfg.small_view}, seed={cfg.seed}"
    )
    run_start = time.perf_counter()

    for step in range(cfg.steps):
        step_start = time.perf_counter()
        q_leaves = as_leaves(theta, requires_grad=True)
        k_leaves = as_leaves(xi, requires_grad=False)

        loss = None
        sums = {col: 0.0 for col in HISTORY_COLUMNS[2:]}
        for idx in rng.integers(0, len(dataset), size=cfg.batch):
            views = _views(dataset[int(idx)].pixels, rng, cfg.small_view)
            result = symmetric_objective(q_leaves, k_leaves, views, settings, grid=FEATURE_GRID)
            loss = result.loss if loss is None else loss + result.loss
            for col in sums:
                sums[col] += result.components[col]
        loss = loss * (1.0 / cfg.batch)
        means = {col: value / cfg.batch for col, value in sums.items()}

        if not all(math.isfinite(v) for v in means.values()):
            raise DivergenceError(
                f"{DivergenceError.code}: non-finite loss at step {step} "
                + ", ".join(f"{k}={v!r}" for k, v in means.items())
            )

        loss.backward()
        if any(np.any(leaf.grad != 0.0) for leaf in k_leaves.values()):
            raise RuntimeError(f"Key-branch parameters received gradient at step {step}.")

        lr = lr_at(step, cfg)
        theta = EncoderParams({
            name: theta[name] - lr * (q_leaves[name].grad + cfg.weight_decay * theta[name])
            for name in PARAM_NAMES
        })
        if not theta.is_finite():
            raise DivergenceError(f"{DivergenceError.code}: parameters became non-finite at step {step}.")
        xi = ema_update(xi, theta, cfg.momentum)

        rows.append({"step": step, "lr": lr, **means})
        if LOG_EVERY > 0 and (step % LOG_EVERY == 0 or step == cfg.steps - 1):
            logger.info(
                f"step {step:4d}  lr={lr:.4f}  total={means['total']:.4f}  "
                f"emd_ab={means['emd_ab']:.4f}  vec_ab={means['vec_ab']:.4f}  "
                f"({time.perf_counter() - step_start:.2f}s/step)"
            )

    if cfg.steps:
        logger.info(f"Training finished in {time.perf_counter() - run_start:.1f}s")
    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    history["step"] = history["step"].astype(np.int64)
    return TrainResult(theta=theta, xi=xi, initial_theta=initial, history=history)


def smoothed_endpoints(history: pd.DataFrame, window: int = 20) -> tuple[float, float]:
    """Mean total loss over the first and the last `window` steps."""
    if history.empty:
        raise ValueError("Empty history has no endpoints.")
    totals = history["total"]
    return float(totals.head(window).mean()), float(totals.tail(window).mean())
