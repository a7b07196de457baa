"""Human-model alignment metrics over attribution maps and ground-truth boxes.

Implements the energy-based pointing game, the effective heat ratio (EHR),
and the weakly supervised localization IoU kept as the criticized baseline.
Multiple ground-truth boxes are merged by union before any metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attribution import AttributionMap
from .errors import InvalidArgumentError

Box = Tuple[int, int, int, int]

DEFAULT_WSOL_THRESHOLD = 0.15


@dataclass
class BoxSet:
    boxes: List[Box]
    height: int
    width: int

    def __post_init__(self):
        for x0, y0, x1, y1 in self.boxes:
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise InvalidArgumentError(
                    f"box {(x0, y0, x1, y1)} invalid for {self.width}×{self.height} image"
                )

    def union_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for x0, y0, x1, y1 in self.boxes:
            mask[y0:y1, x0:x1] = True
        return mask


@dataclass
class ThresholdGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if len(v) < 2 or not np.all(np.diff(v) > 0) or v[0] < 0 or v[-1] >= 1:
            raise InvalidArgumentError("thresholds must be ≥ 2 strictly increasing values in [0, 1)")
        self.values = v

    @staticmethod
    def default(size: int = 100, maximum: float = 0.99) -> "ThresholdGrid":
        return ThresholdGrid(np.linspace(0.0, maximum, size))


def _check_map(amap: AttributionMap, boxes: BoxSet, require_normalized: bool = True) -> np.ndarray:
    values = np.asarray(amap.values, dtype=np.float64)
    if values.shape != (boxes.height, boxes.width):
        raise InvalidArgumentError(
            f"map shape {values.shape} does not match boxes {(boxes.height, boxes.width)}"
        )
    if require_normalized and not amap.normalized:
        raise InvalidArgumentError("metric requires a min-max normalized map")
    return values


def energy_pg(amap: AttributionMap, boxes: BoxSet) -> float:
    """Fraction of total attribution energy inside the box union; 0 if no energy."""
    values = _check_map(amap, boxes)
    total = values.sum()
    if total <= 0:
        return 0.0
    return float(values[boxes.union_mask()].sum() / total)


def ehr(
    amap: AttributionMap,
    boxes: BoxSet,
    grid: Optional[ThresholdGrid] = None,
    threshold_numerator: bool = True,
    return_raw_auc: bool = False,
) -> float | Tuple[float, float]:
    """Threshold-swept in-box energy over super-threshold pixel count.

    Per threshold λ: ratio = Σ(L over in-box super-threshold pixels) divided
    by the count of super-threshold pixels anywhere. With
    ``threshold_numerator=False`` the numerator sums all in-box energy
    regardless of λ (the literal printed form of the equation). Thresholds
    with an empty super-threshold set carry the previous ratio forward (0 if
    none exists). The score is the trapezoid area under ratio-vs-λ divided
    by the λ range; ``return_raw_auc`` additionally returns the
    unnormalized area.
    """
    values = _check_map(amap, boxes)
    grid = grid or ThresholdGrid.default()
    in_box = boxes.union_mask()
    ratios = np.empty(len(grid.values))
    prev = 0.0
    for i, lam in enumerate(grid.values):
        super_mask = values > lam
        count = int(super_mask.sum())
        if count == 0:
            ratios[i] = prev
            continue
        if threshold_numerator:
            num = values[super_mask & in_box].sum()
        else:
            num = values[in_box].sum()
        prev = ratios[i] = num / count
    raw_auc = float(np.trapezoid(ratios, grid.values))
    score = raw_auc / (grid.values[-1] - grid.values[0])
    return (score, raw_auc) if return_raw_auc else score


def _best_iou(est: Box, boxes: Sequence[Box]) -> float:
    ex0, ey0, ex1, ey1 = est
    best = 0.0
    for x0, y0, x1, y1 in boxes:
        ix0, iy0 = max(ex0, x0), max(ey0, y0)
        ix1, iy1 = min(ex1, x1), min(ey1, y1)
        inter = max(ix1 - ix0, 0) * max(iy1 - iy0, 0)
        union = (ex1 - ex0) * (ey1 - ey0) + (x1 - x0) * (y1 - y0) - inter
        if union > 0:
            best = max(best, inter / union)
    return best


def wsol_iou(
    amap: AttributionMap, boxes: BoxSet, threshold: float = DEFAULT_WSOL_THRESHOLD
) -> Tuple[float, Optional[Box]]:
    """IoU between the ground truth and the tightest box around the
    super-threshold mask. Depends only on the mask support, not the values
    above threshold. Empty mask reports IoU 0 with no box."""
    values = _check_map(amap, boxes)
    ys, xs = np.nonzero(values > threshold)
    if len(ys) == 0:
        return 0.0, None
    est: Box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return _best_iou(est, boxes.boxes), est
