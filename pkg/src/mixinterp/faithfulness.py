"""Grid-based deletion/insertion engine and inter-model faithfulness scores.

Images are divided into square cells; cells are replaced (deletion) or
restored (insertion) in an order given by the attribution map: least
relevant first (LeRF), most relevant first (MoRF), or random order (RaO).
The inter-model score is the AUC of the pointwise difference between the
attribution-ordered mean curve and the RaO mean curve, which cancels the
model-robustness component shared by both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .attribution import AttributionMap
from .errors import InvalidArgumentError

# oracle(images: N×H×W×C, target_class) -> scores: N floats in [0, 1]
ClassOracle = Callable[[np.ndarray, int], np.ndarray]

ORDERINGS = ("lerf", "morf", "rao")


@dataclass
class ReplacementPolicy:
    """Constant fill used for removed/not-yet-inserted cells, one value per channel."""

    fill: np.ndarray

    @staticmethod
    def dataset_mean(images: np.ndarray) -> "ReplacementPolicy":
        return ReplacementPolicy(fill=images.mean(axis=(0, 1, 2)))

    @staticmethod
    def image_mean(image: np.ndarray) -> "ReplacementPolicy":
        return ReplacementPolicy(fill=image.mean(axis=(0, 1)))


@dataclass
class GridRanking:
    cell_px: int
    grid_shape: Tuple[int, int]          # rows, cols of cells
    order: np.ndarray                    # cell ids (row-major), every cell once
    ordering: str
    cell_sums: np.ndarray
    partial_cells: bool = False

    @property
    def num_cells(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    def cell_slice(self, cell_id: int, height: int, width: int):
        rows, cols = self.grid_shape
        r, c = divmod(int(cell_id), cols)
        return (
            slice(r * self.cell_px, min((r + 1) * self.cell_px, height)),
            slice(c * self.cell_px, min((c + 1) * self.cell_px, width)),
        )


def _grid_geometry(height: int, width: int, cell_px: int) -> Tuple[Tuple[int, int], bool]:
    if cell_px <= 0:
        raise InvalidArgumentError(f"cell_px must be positive, got {cell_px}")
    rows = -(-height // cell_px)
    cols = -(-width // cell_px)
    partial = (height % cell_px != 0) or (width % cell_px != 0)
    return (rows, cols), partial


def cell_sums(values: np.ndarray, cell_px: int) -> np.ndarray:
    (rows, cols), _ = _grid_geometry(values.shape[0], values.shape[1], cell_px)
    sums = np.zeros(rows * cols)
    for r in range(rows):
        for c in range(cols):
            block = values[r * cell_px : (r + 1) * cell_px, c * cell_px : (c + 1) * cell_px]
            sums[r * cols + c] = block.sum()
    return sums


def rank_grids(
    amap: AttributionMap,
    cell_px: int,
    ordering: str,
    rng: Optional[np.random.Generator] = None,
) -> GridRanking:
    """Rank cells by their attribution sum; ties break to the smallest
    row-major cell index (stable sort). RaO ignores the sums and needs rng."""
    ordering = ordering.lower()
    if ordering not in ORDERINGS:
        raise InvalidArgumentError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    values = np.asarray(amap.values, dtype=np.float64)
    grid_shape, partial = _grid_geometry(values.shape[0], values.shape[1], cell_px)
    sums = cell_sums(values, cell_px)
    if ordering == "lerf":
        order = np.argsort(sums, kind="stable")
    elif ordering == "morf":
        order = np.argsort(-sums, kind="stable")
    else:
        if rng is None:
            raise InvalidArgumentError("random ordering requires an rng")
        order = rng.permutation(len(sums))
    return GridRanking(
        cell_px=cell_px,
        grid_shape=grid_shape,
        order=order.astype(np.int64),
        ordering=ordering,
        cell_sums=sums,
        partial_cells=partial,
    )


@dataclass
class ScoreCurve:
    x: np.ndarray                        # fraction of cells processed, 0..1
    y: np.ndarray                        # normalized score per step, in [0, 1]
    se: Optional[np.ndarray] = None

    def auc(self) -> float:
        return float(np.trapezoid(self.y, self.x))


def _step_images(
    image: np.ndarray, ranking: GridRanking, fill: ReplacementPolicy, mode: str
) -> np.ndarray:
    """Stack of T+1 perturbed images: step t has t cells replaced (deletion)
    or t cells restored from the all-fill image (insertion)."""
    height, width = image.shape[:2]
    t_total = ranking.num_cells
    steps = np.empty((t_total + 1,) + image.shape, dtype=image.dtype)
    fill_img = np.broadcast_to(
        fill.fill.astype(image.dtype), image.shape
    ).copy()
    current = image.copy() if mode == "deletion" else fill_img
    steps[0] = current
    for t, cell in enumerate(ranking.order, start=1):
        ys, xs = ranking.cell_slice(int(cell), height, width)
        current = current.copy()
        current[ys, xs, :] = fill_img[ys, xs, :] if mode == "deletion" else image[ys, xs, :]
        steps[t] = current
    return steps


def _normalized_curve(scores: np.ndarray, anchor: float, num_cells: int) -> ScoreCurve:
    anchor = max(anchor, np.finfo(np.float64).tiny)
    y = np.clip(scores / anchor, 0.0, 1.0)
    x = np.arange(num_cells + 1) / num_cells
    return ScoreCurve(x=x, y=y)


def deletion_curve(
    oracle: ClassOracle,
    image: np.ndarray,
    target_class: int,
    ranking: GridRanking,
    fill: ReplacementPolicy,
) -> ScoreCurve:
    """Score after each cell replacement, normalized by the unperturbed score."""
    _check_ranking(image, ranking)
    steps = _step_images(image, ranking, fill, "deletion")
    scores = np.asarray(oracle(steps, target_class), dtype=np.float64)
    return _normalized_curve(scores, scores[0], ranking.num_cells)


def insertion_curve(
    oracle: ClassOracle,
    image: np.ndarray,
    target_class: int,
    ranking: GridRanking,
    fill: ReplacementPolicy,
) -> ScoreCurve:
    """Score after each cell restoration from the all-fill image; normalized
    by the same anchor as deletion, the unperturbed-image score."""
    _check_ranking(image, ranking)
    steps = _step_images(image, ranking, fill, "insertion")
    scores = np.asarray(oracle(steps, target_class), dtype=np.float64)
    anchor = float(oracle(image[None], target_class)[0])
    return _normalized_curve(scores, anchor, ranking.num_cells)


def _check_ranking(image: np.ndarray, ranking: GridRanking) -> None:
    grid_shape, _ = _grid_geometry(image.shape[0], image.shape[1], ranking.cell_px)
    if grid_shape != ranking.grid_shape:
        raise InvalidArgumentError(
            f"ranking grid {ranking.grid_shape} does not match image grid {grid_shape}"
        )


def rao_mean_curve(
    oracle: ClassOracle,
    image: np.ndarray,
    target_class: int,
    cell_px: int,
    fill: ReplacementPolicy,
    rng: np.random.Generator,
    n_orders: int = 5,
    mode: str = "deletion",
) -> ScoreCurve:
    """Mean curve over ``n_orders`` independent random cell orders."""
    if n_orders < 1:
        raise InvalidArgumentError(f"n_orders must be ≥ 1, got {n_orders}")
    dummy = AttributionMap(
        values=np.zeros(image.shape[:2], dtype=np.float32), target_class=target_class,
        method="rao", normalized=True,
    )
    curves = []
    for _ in range(n_orders):
        ranking = rank_grids(dummy, cell_px, "rao", rng=rng)
        fn = deletion_curve if mode == "deletion" else insertion_curve
        curves.append(fn(oracle, image, target_class, ranking, fill))
    y = np.mean([c.y for c in curves], axis=0)
    return ScoreCurve(x=curves[0].x, y=y)


@dataclass
class FaithfulnessResult:
    model_id: str
    method: str
    mode: str                            # "deletion" or "insertion"
    auc: float                           # AUC of the difference curve, ×100
    se: float                            # per-step SE averaged over steps
    attr_curve: ScoreCurve               # mean LeRF (deletion) / MoRF (insertion)
    rao_curve: ScoreCurve
    diff_curve: ScoreCurve
    num_samples: int = 0
    config_hash: str = ""


def inter_model_score(
    oracle: ClassOracle,
    images: Sequence[np.ndarray],
    targets: Sequence[int],
    maps: Sequence[AttributionMap],
    mode: str,
    cell_px: int,
    fill: ReplacementPolicy,
    rng: np.random.Generator,
    n_orders: int = 5,
    model_id: str = "",
    method: str = "",
    config_hash: str = "",
) -> FaithfulnessResult:
    """AUC of (LeRF − RaO) deletion or (MoRF − RaO) insertion, ×100.

    ``targets`` are the model's top-1 predictions on the unperturbed images,
    fixed across perturbation steps. The per-step standard error of the
    difference across images is averaged over steps.
    """
    if mode not in ("deletion", "insertion"):
        raise InvalidArgumentError(f"mode must be deletion or insertion, got {mode!r}")
    if not (len(images) == len(maps) == len(targets)) or len(images) == 0:
        raise InvalidArgumentError("images, targets and maps must be nonempty and equal-length")
    ordering = "lerf" if mode == "deletion" else "morf"
    curve_fn = deletion_curve if mode == "deletion" else insertion_curve
    attr_rows, rao_rows = [], []
    for image, target, amap in zip(images, targets, maps):
        ranking = rank_grids(amap, cell_px, ordering)
        attr_rows.append(curve_fn(oracle, image, target, ranking, fill).y)
        rao_rows.append(
            rao_mean_curve(oracle, image, target, cell_px, fill, rng, n_orders, mode).y
        )
    attr_rows = np.asarray(attr_rows)
    rao_rows = np.asarray(rao_rows)
    diff = attr_rows - rao_rows
    x = np.arange(diff.shape[1]) / (diff.shape[1] - 1)
    mean_diff = diff.mean(axis=0)
    if len(images) > 1:
        per_step_se = diff.std(axis=0, ddof=1) / np.sqrt(len(images))
    else:
        per_step_se = np.zeros(diff.shape[1])
    return FaithfulnessResult(
        model_id=model_id,
        method=method,
        mode=mode,
        auc=float(np.trapezoid(mean_diff, x) * 100.0),
        se=float(per_step_se.mean()),
        attr_curve=ScoreCurve(x=x, y=attr_rows.mean(axis=0)),
        rao_curve=ScoreCurve(x=x, y=rao_rows.mean(axis=0)),
        diff_curve=ScoreCurve(x=x, y=mean_diff, se=per_step_se),
        num_samples=len(images),
        config_hash=config_hash,
    )
