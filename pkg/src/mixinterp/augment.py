"""Mixed-sample / regional-dropout augmentations: Cutout, Mixup, CutMix, SaliencyMix.

All functions operate on float H×W×C numpy images in [0, 1] and an explicit
``numpy.random.Generator`` so callers own their randomness. Each returns a
``MixOutcome`` whose ``mix_weight`` is the weight of ``label_a`` in the mixed
label. For the cut-based methods the weight is re-adjusted to the exact
fraction of pixels left uncovered after border clipping, so the soft label
always matches the pixel content.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InvalidArgumentError

Box = Tuple[int, int, int, int]  # (x0, y0, x1, y1), half-open


@dataclass
class MixOutcome:
    image: np.ndarray
    label_a: int
    label_b: Optional[int]
    mix_weight: float
    box: Optional[Box] = None


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.size == 0:
        raise InvalidArgumentError(f"expected nonempty H×W×C image, got shape {image.shape}")


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")


def _clipped_box(center: Tuple[int, int], w: int, h: int, width: int, height: int) -> Box:
    """Box of size w×h around (cx, cy), clipped to the image. Half-open coords."""
    cx, cy = center
    x0 = max(cx - w // 2, 0)
    y0 = max(cy - h // 2, 0)
    x1 = min(cx - w // 2 + w, width)
    y1 = min(cy - h // 2 + h, height)
    return (x0, y0, max(x1, x0), max(y1, y0))


def cutout(
    image: np.ndarray,
    patch_side: int,
    rng: np.random.Generator,
    label: int = 0,
    center: Optional[Tuple[int, int]] = None,
) -> MixOutcome:
    """Zero out a square patch of side ``patch_side`` at a uniform random center.

    The patch is clipped at image borders. The label is unchanged
    (``mix_weight`` stays 1). ``center`` overrides the random draw, mainly
    for deterministic tests.
    """
    _check_image(image)
    if patch_side <= 0:
        raise InvalidArgumentError(f"patch_side must be positive, got {patch_side}")
    height, width = image.shape[:2]
    if center is None:
        center = (int(rng.integers(0, width)), int(rng.integers(0, height)))
    x0, y0, x1, y1 = _clipped_box(center, patch_side, patch_side, width, height)
    out = image.copy()
    out[y0:y1, x0:x1, :] = 0.0
    return MixOutcome(image=out, label_a=label, label_b=None, mix_weight=1.0, box=(x0, y0, x1, y1))


def mixup(
    image_a: np.ndarray,
    image_b: np.ndarray,
    label_a: int,
    label_b: int,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
) -> MixOutcome:
    """Pixel-wise linear interpolation with weight lam ~ Beta(alpha, alpha)."""
    _check_image(image_a)
    _check_same_shape(image_a, image_b)
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    out = lam * image_a + (1.0 - lam) * image_b
    return MixOutcome(image=out, label_a=label_a, label_b=label_b, mix_weight=lam, box=None)


def sample_cut_box(
    lam: float,
    width: int,
    height: int,
    rng: np.random.Generator,
    center: Optional[Tuple[int, int]] = None,
) -> Tuple[Box, float]:
    """Sample a cut rectangle whose area targets a (1-lam) fraction of the image.

    Side lengths are round(dim * sqrt(1-lam)); the center is uniform over the
    image and the box is clipped at borders. Returns the clipped box together
    with the area-exact mix weight 1 - clipped_area / (width*height). A box
    sized to cover the whole image always covers it exactly, regardless of
    the sampled center.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lam must lie in [0, 1], got {lam}")
    ratio = float(np.sqrt(1.0 - lam))
    w = int(round(width * ratio))
    h = int(round(height * ratio))
    if w >= width and h >= height:
        return (0, 0, width, height), 0.0
    if center is None:
        center = (int(rng.integers(0, width)), int(rng.integers(0, height)))
    box = _clipped_box(center, w, h, width, height)
    x0, y0, x1, y1 = box
    area = (x1 - x0) * (y1 - y0)
    return box, 1.0 - area / (width * height)


def cutmix(
    image_a: np.ndarray,
    image_b: np.ndarray,
    label_a: int,
    label_b: int,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
) -> MixOutcome:
    """Paste a random rectangle of image_b into image_a; labels mix by area."""
    _check_image(image_a)
    _check_same_shape(image_a, image_b)
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    height, width = image_a.shape[:2]
    box, mix_weight = sample_cut_box(lam, width, height, rng)
    x0, y0, x1, y1 = box
    out = image_a.copy()
    out[y0:y1, x0:x1, :] = image_b[y0:y1, x0:x1, :]
    return MixOutcome(image=out, label_a=label_a, label_b=label_b, mix_weight=mix_weight, box=box)


def fine_grained_saliency(image: np.ndarray) -> np.ndarray:
    """Deterministic stand-in saliency field: smoothed gradient magnitude.

    Grayscale central-difference gradient magnitude, box-filtered 3×3.
    Non-negative, same H×W as the input. Pluggable: SaliencyMix only needs
    the argmax of some non-negative field.
    """
    _check_image(image)
    gray = image.mean(axis=2)
    if gray.shape[0] < 2 or gray.shape[1] < 2:
        return np.zeros_like(gray)
    gy, gx = np.gradient(gray)
    mag = np.sqrt(gx * gx + gy * gy)
    return uniform_filter(mag, size=3, mode="nearest")


def saliencymix(
    image_a: np.ndarray,
    image_b: np.ndarray,
    label_a: int,
    label_b: int,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
) -> MixOutcome:
    """CutMix variant where the patch is centered on image_b's most salient pixel."""
    _check_image(image_a)
    _check_same_shape(image_a, image_b)
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    height, width = image_a.shape[:2]
    field = fine_grained_saliency(image_b)
    flat = int(np.argmax(field))  # ties break to smallest row-major index
    cy, cx = divmod(flat, width)
    box, mix_weight = sample_cut_box(lam, width, height, rng, center=(cx, cy))
    x0, y0, x1, y1 = box
    out = image_a.copy()
    out[y0:y1, x0:x1, :] = image_b[y0:y1, x0:x1, :]
    return MixOutcome(image=out, label_a=label_a, label_b=label_b, mix_weight=mix_weight, box=box)
