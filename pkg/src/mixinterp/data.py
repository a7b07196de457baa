"""Synthetic object-on-background image generator with exact box annotations.

Scenes are a single colored geometric shape on a textured background. The
generator is shared by the training harness (classification labels + boxes
for the alignment metrics) and by the dissection corpus builder (shape,
part, texture and color masks). Everything is deterministic under a seeded
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import InvalidArgumentError

SHAPES = ("square", "circle", "triangle", "diamond", "cross")
TEXTURES = ("stripes", "checker", "blotch")
COLORS: Dict[str, Tuple[float, float, float]] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.15, 0.2, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "magenta": (0.85, 0.1, 0.8),
    "cyan": (0.1, 0.8, 0.85),
}
# 10-way classification task: 5 shapes × {red, blue}
CLASS_DEFS = [(shape, color) for shape in SHAPES for color in ("red", "blue")]


@dataclass
class Scene:
    image: np.ndarray            # H×W×3 float32 in [0,1]
    shape: str
    color: str
    texture: str
    shape_mask: np.ndarray       # H×W bool
    box: Tuple[int, int, int, int]


@dataclass
class BoxDataset:
    images: np.ndarray           # N×H×W×3 float32
    labels: np.ndarray           # N int64
    boxes: List[List[Tuple[int, int, int, int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)


def shape_mask(kind: str, size: int, center: Tuple[int, int], radius: int) -> np.ndarray:
    """Binary mask of a shape with the given half-extent, clipped to the image."""
    if kind not in SHAPES:
        raise InvalidArgumentError(f"unknown shape {kind!r}")
    cy, cx = center
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        mask = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    elif kind == "circle":
        mask = dy * dy + dx * dx <= radius * radius
    elif kind == "diamond":
        mask = np.abs(dy) + np.abs(dx) <= radius
    elif kind == "triangle":
        # upward triangle: widens linearly from apex to base
        mask = (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2)
    else:  # cross
        arm = max(radius // 3, 1)
        mask = ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | (
            (np.abs(dx) <= arm) & (np.abs(dy) <= radius)
        )
    return mask


def mask_bbox(mask: np.ndarray) -> Tuple[int, int, int, int]:
    """Tightest (x0, y0, x1, y1) half-open rectangle around the true pixels."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise InvalidArgumentError("empty mask has no bounding box")
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Muted grayscale-ish background so saturated color stays on the object."""
    base = rng.uniform(0.35, 0.6)
    amp = rng.uniform(0.08, 0.18)
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "stripes":
        period = int(rng.integers(3, 7))
        phase = int(rng.integers(0, period))
        pattern = ((xx + phase) // max(period // 2, 1)) % 2
    elif kind == "checker":
        cell = int(rng.integers(2, 6))
        pattern = ((yy // cell) + (xx // cell)) % 2
    elif kind == "blotch":
        pattern = rng.random((size // 4 + 1, size // 4 + 1))
        pattern = np.repeat(np.repeat(pattern, 4, axis=0), 4, axis=1)[:size, :size]
    else:
        raise InvalidArgumentError(f"unknown texture {kind!r}")
    gray = np.clip(base + amp * (pattern - 0.5) * 2.0, 0.0, 1.0)
    tint = rng.uniform(0.9, 1.0, size=3)
    return (gray[:, :, None] * tint[None, None, :]).astype(np.float32)


def render_scene(
    rng: np.random.Generator,
    image_size: int = 32,
    shape: str | None = None,
    color: str | None = None,
    texture: str | None = None,
) -> Scene:
    """Render one shape-on-texture scene; unspecified attributes drawn at random.

    Shape extent is sampled so the bounding box covers roughly 12-45% of the
    image, inside the eval-sample filter window.
    """
    if image_size < 8:
        raise InvalidArgumentError(f"image_size must be ≥ 8, got {image_size}")
    shape = shape or SHAPES[rng.integers(0, len(SHAPES))]
    color = color or list(COLORS)[rng.integers(0, len(COLORS))]
    texture = texture or TEXTURES[rng.integers(0, len(TEXTURES))]
    if color not in COLORS:
        raise InvalidArgumentError(f"unknown color {color!r}")

    radius = int(rng.integers(max(int(0.18 * image_size), 2), max(int(0.32 * image_size), 3) + 1))
    lo, hi = radius, image_size - radius - 1
    cy = int(rng.integers(lo, hi + 1))
    cx = int(rng.integers(lo, hi + 1))
    mask = shape_mask(shape, image_size, (cy, cx), radius)

    image = _texture(texture, image_size, rng).copy()
    rgb = np.array(COLORS[color], dtype=np.float32)
    jitter = rng.uniform(-0.05, 0.05, size=3).astype(np.float32)
    image[mask] = np.clip(rgb + jitter, 0.0, 1.0)
    return Scene(
        image=image.astype(np.float32),
        shape=shape,
        color=color,
        texture=texture,
        shape_mask=mask,
        box=mask_bbox(mask),
    )


def make_classification_dataset(
    num_samples: int,
    rng: np.random.Generator,
    image_size: int = 32,
) -> BoxDataset:
    """Balanced-ish 10-class dataset with one box per image."""
    if num_samples <= 0:
        raise InvalidArgumentError("num_samples must be positive")
    images = np.empty((num_samples, image_size, image_size, 3), dtype=np.float32)
    labels = np.empty(num_samples, dtype=np.int64)
    boxes: List[List[Tuple[int, int, int, int]]] = []
    for i in range(num_samples):
        cls = int(rng.integers(0, len(CLASS_DEFS)))
        shape, color = CLASS_DEFS[cls]
        scene = render_scene(rng, image_size=image_size, shape=shape, color=color)
        images[i] = scene.image
        labels[i] = cls
        boxes.append([scene.box])
    return BoxDataset(images=images, labels=labels, boxes=boxes)
