"""
synthetic.py

Non-iconic synthetic images: 2–4 shapes in distinct colours scattered over a
textured noise background, drawn with Pillow's ImageDraw. Used as the
training corpus and written to disk by the gen-synthetic command.

The generator consumes one numpy Generator in a fixed order, so a seed
reproduces the whole corpus.
"""

import io
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw

from config import IMAGE_SIZE
from fmap_io import atomic_write

logger = logging.getLogger(__name__)

# ── Palette ────────────────────────────────────────────────────────────────────
# Shapes in one image draw colours without replacement from this list.

PALETTE: list[tuple[int, int, int]] = [
    (220, 40, 40),
    (40, 180, 60),
    (40, 80, 220),
    (240, 200, 30),
    (200, 60, 200),
    (30, 200, 210),
    (250, 130, 20),
    (245, 245, 245),
]
SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
MIN_SHAPES = 2
MAX_SHAPES = 4

MANIFEST_COLUMNS = ["file", "n_shapes", "shapes", "colors"]


@dataclass(frozen=True)
class SyntheticImage:
    pixels: np.ndarray                       # (H, W, 3) in [0, 1]
    n_shapes: int
    kinds: tuple[str, ...]
    colors: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"SyntheticImage pixels must be H×W×3, got {arr.shape}.")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("SyntheticImage pixels must lie in [0, 1].")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency colour gradient plus per-pixel noise, uint8 RGB."""
    base = rng.uniform(60, 160, size=3)
    tilt = rng.uniform(-40, 40, size=(2, 3))
    ramp = np.linspace(-0.5, 0.5, size)
    field = (
        base[None, None, :]
        + ramp[:, None, None] * tilt[0][None, None, :]
        + ramp[None, :, None] * tilt[1][None, None, :]
    )
    noise = rng.normal(0.0, 12.0, size=(size, size, 3))
    return np.clip(field + noise, 0, 255).astype(np.uint8)


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, rng: np.random.Generator,
                size: int, color: tuple[int, int, int]) -> None:
    extent = int(rng.integers(size // 6, size // 2))
    x0 = int(rng.integers(0, size - extent))
    y0 = int(rng.integers(0, size - extent))
    box = (x0, y0, x0 + extent, y0 + extent)
    if kind == "ellipse":
        draw.ellipse(box, fill=color)
    elif kind == "rectangle":
        draw.rectangle(box, fill=color)
    else:
        draw.polygon([(x0 + extent // 2, y0), (x0, y0 + extent), (x0 + extent, y0 + extent)], fill=color)


def generate_image(rng: np.random.Generator, size: int = IMAGE_SIZE) -> SyntheticImage:
    n_shapes = int(rng.integers(MIN_SHAPES, MAX_SHAPES + 1))
    color_idx = rng.choice(len(PALETTE), size=n_shapes, replace=False)
    kind_idx = rng.integers(0, len(SHAPE_KINDS), size=n_shapes)

    canvas = Image.fromarray(_background(rng, size))
    draw = ImageDraw.Draw(canvas)
    colors = tuple(PALETTE[int(i)] for i in color_idx)
    kinds = tuple(SHAPE_KINDS[int(k)] for k in kind_idx)
    for kind, color in zip(kinds, colors):
        _draw_shape(draw, kind, rng, size, color)

    pixels = np.asarray(canvas, dtype=np.float64) / 255.0
    return SyntheticImage(pixels=pixels, n_shapes=n_shapes, kinds=kinds, colors=colors)


def generate_corpus(n: int, seed: int, size: int = IMAGE_SIZE) -> list[SyntheticImage]:
    if n < 0:
        raise ValueError(f"Corpus size must be >= 0, got {n}.")
    rng = np.random.default_rng(seed)
    return [generate_image(rng, size) for _ in range(n)]


def _png_bytes(image: SyntheticImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.round(image.pixels * 255.0).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def write_corpus(images: list[SyntheticImage], out_dir: str) -> list[str]:
    """
    Write image_NNNN.png files plus manifest.csv into out_dir.

    An empty corpus leaves the directory empty.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths: list[str] = []
    rows = []
    for idx, image in enumerate(images):
        name = f"image_{idx:04d}.png"
        path = os.path.join(out_dir, name)
        atomic_write(path, _png_bytes(image))
        paths.append(path)
        rows.append({
            "file": name,
            "n_shapes": image.n_shapes,
            "shapes": ";".join(image.kinds),
            "colors": ";".join("#%02x%02x%02x" % c for c in image.colors),
        })

    if rows:
        manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
        atomic_write(os.path.join(out_dir, "manifest.csv"), manifest.to_csv(index=False).encode())
    logger.info(f"Wrote {len(paths)} synthetic image(s) to {out_dir}")
    return paths
