"""
augment.py

View generation for training: random crop, bilinear resize, horizontal flip
and per-channel colour scaling, all driven by a numpy Generator so a fixed
seed reproduces every view bit-for-bit.

    augment(image, rng)     full view, VIEW_SIZE × VIEW_SIZE
    small_view(image, rng)  third view at SMALL_VIEW_SCALE of the full view

Resizing goes through Pillow on float32 planes ("F" mode) one channel at a
time, so no 8-bit quantization happens between crop and encoder.
"""

import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image

from config import SMALL_VIEW_SCALE, VIEW_SIZE

logger = logging.getLogger(__name__)

# Crop side as a fraction of the image side.
MIN_CROP_FRACTION = 0.5
# Per-channel multiplicative colour jitter range.
COLOR_SCALE_RANGE = (0.6, 1.4)


@dataclass(frozen=True)
class AugmentParams:
    top: int
    left: int
    size: int
    flip: bool
    color_scale: tuple[float, float, float]

    @classmethod
    def identity(cls, image_size: int) -> "AugmentParams":
        return cls(top=0, left=0, size=image_size, flip=False, color_scale=(1.0, 1.0, 1.0))


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"Expected an H×W×3 image, got shape {arr.shape}.")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"Expected a square image, got {arr.shape[0]}×{arr.shape[1]}.")
    return arr


def sample_augmentation(rng: np.random.Generator, image_size: int) -> AugmentParams:
    """Draw crop, flip and colour parameters in a fixed order."""
    lo = max(1, int(round(MIN_CROP_FRACTION * image_size)))
    size = int(rng.integers(lo, image_size + 1))
    top = int(rng.integers(0, image_size - size + 1))
    left = int(rng.integers(0, image_size - size + 1))
    flip = bool(rng.random() < 0.5)
    scale = rng.uniform(*COLOR_SCALE_RANGE, size=3)
    return AugmentParams(top, left, size, flip, tuple(float(s) for s in scale))


def _resize(crop: np.ndarray, out_size: int) -> np.ndarray:
    channels = []
    for ch in range(crop.shape[2]):
        plane = Image.fromarray(np.ascontiguousarray(crop[:, :, ch], dtype=np.float32))
        plane = plane.resize((out_size, out_size), Image.Resampling.BILINEAR)
        channels.append(np.asarray(plane, dtype=np.float64))
    return np.stack(channels, axis=2)


def apply_augmentation(image: np.ndarray, params: AugmentParams, out_size: int) -> np.ndarray:
    """Crop, flip, resize to out_size×out_size, colour-scale, clamp to [0, 1]."""
    arr = _check_image(image)
    if params.top + params.size > arr.shape[0] or params.left + params.size > arr.shape[1]:
        raise ValueError(f"Crop {params} falls outside a {arr.shape[0]}×{arr.shape[1]} image.")

    view = arr[params.top:params.top + params.size, params.left:params.left + params.size, :]
    if params.flip:
        view = view[:, ::-1, :]
    if params.size != out_size:
        view = _resize(view, out_size)
    view = view * np.asarray(params.color_scale, dtype=np.float64)
    return np.clip(view, 0.0, 1.0)


def augment(image: np.ndarray, rng: np.random.Generator, out_size: int = VIEW_SIZE) -> np.ndarray:
    arr = _check_image(image)
    return apply_augmentation(arr, sample_augmentation(rng, arr.shape[0]), out_size)


def small_view(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return augment(image, rng, out_size=int(round(VIEW_SIZE * SMALL_VIEW_SCALE)))
