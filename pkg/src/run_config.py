"""
run_config.py

RunConfig files for the train command.

Format: one `key = value` per line, `#` starts a comment, blank lines are
ignored. grid_sizes is a comma list ("7,5,3"); small_view takes
true/false. Every problem in a file is collected with its line number and
raised together as one ConfigError.
"""

import logging
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config import (
    DEFAULT_BATCH,
    DEFAULT_DATASET_SIZE,
    DEFAULT_GRIDS,
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_STEPS,
    DEFAULT_WARMUP_STEPS,
    DEFAULT_WEIGHT_DECAY,
    FEATURE_GRID,
)
from ot_solver import SinkhornConfig
from pyramid import PyramidSpec
from trainer import TrainConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    code = "CONFIG_INVALID"

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__(f"{self.code}: " + "; ".join(problems))


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lambda_: float = Field(DEFAULT_LAMBDA, alias="lambda", gt=0)
    iterations: int = Field(DEFAULT_ITERATIONS, ge=1)
    grid_sizes: tuple[int, ...] = DEFAULT_GRIDS
    momentum: float = Field(DEFAULT_MOMENTUM, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    steps: int = Field(DEFAULT_STEPS, ge=0)
    batch: int = Field(DEFAULT_BATCH, ge=1)
    lr: float = Field(DEFAULT_LR, ge=0.0)
    loss_mix: float = Field(1.0, ge=0.0)
    small_view: bool = True
    warmup_steps: int = Field(DEFAULT_WARMUP_STEPS, ge=0)
    weight_decay: float = Field(DEFAULT_WEIGHT_DECAY, ge=0.0)
    marginals: Literal["vector", "mean", "uniform"] = "vector"
    objective: Literal["emd", "byol"] = "emd"
    dataset_size: int = Field(DEFAULT_DATASET_SIZE, ge=1)

    @field_validator("grid_sizes", mode="before")
    @classmethod
    def _split_grids(cls, value):
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",")]
            if not all(p.lstrip("-").isdigit() for p in parts):
                raise ValueError(f"expected a comma list of integers, got '{value}'")
            value = tuple(int(p) for p in parts)
        return value

    @field_validator("grid_sizes")
    @classmethod
    def _check_grids(cls, value: tuple[int, ...]):
        if not value:
            raise ValueError("needs at least one grid size")
        if any(g < 1 for g in value):
            raise ValueError(f"grid sizes must be >= 1, got {value}")
        if any(g > FEATURE_GRID for g in value):
            raise ValueError(f"grid sizes must not exceed the {FEATURE_GRID}×{FEATURE_GRID} feature grid, got {value}")
        return value


KNOWN_KEYS = frozenset(
    field.alias or name for name, field in RunConfig.model_fields.items()
)


def parse_run_config(text: str) -> RunConfig:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    problems: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got '{line}'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            problems.append(f"line {lineno}: unknown key '{key}'")
            continue
        if key in lines:
            problems.append(f"line {lineno}: duplicate key '{key}' (first set on line {lines[key]})")
            continue
        values[key] = value
        lines[key] = lineno

    try:
        config = RunConfig.model_validate(values)
    except ValidationError as exc:
        for err in exc.errors():
            key = str(err["loc"][0]) if err["loc"] else "?"
            where = f"line {lines[key]}" if key in lines else "config"
            problems.append(f"{where}: {key}: {err['msg']}")
        config = None

    if problems:
        raise ConfigError(problems)
    return config


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    config = parse_run_config(text)
    logger.info(f"Loaded run config from {path}")
    return config


def to_train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        momentum=rc.momentum,
        lr=rc.lr,
        warmup_steps=rc.warmup_steps,
        batch=rc.batch,
        steps=rc.steps,
        seed=rc.seed,
        loss_mix=rc.loss_mix,
        weight_decay=rc.weight_decay,
        sinkhorn=SinkhornConfig(lambda_=rc.lambda_, iterations=rc.iterations),
        pyramid=PyramidSpec(rc.grid_sizes),
        small_view=rc.small_view,
        marginals=rc.marginals,
        objective=rc.objective,
        dataset_size=rc.dataset_size,
    )
