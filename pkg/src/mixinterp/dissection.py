"""Network dissection: find units whose thresholded activations overlap
human-recognizable concept masks.

Per unit k the activation threshold T_k is the empirical 0.99 quantile of
its raw activation distribution over all images and spatial positions. The
unit's binary mask is the bilinearly upsampled activation map thresholded
at T_k, and IoU against each concept mask is accumulated dataset-wide
(sums over the whole corpus before dividing). A unit is a detector of its
best concept when that IoU exceeds the detector threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import binary_erosion

from .data import COLORS, SHAPES, TEXTURES, render_scene
from .errors import InvalidArgumentError
from .harness import SmallResNet, to_nchw

CATEGORIES = ("object", "part", "material", "color")

DETECTOR_IOU_THRESHOLD = 0.04
TOP_QUANTILE = 0.01

# activation_fn(images: N×H×W×C numpy) -> N×C×h×w activations
ActivationFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class ConceptInfo:
    concept_id: str
    name: str
    category: str


@dataclass
class ConceptCorpus:
    images: np.ndarray                                  # N×H×W×3 float32
    masks: List[Dict[str, np.ndarray]]                  # per image: concept id → bool H×W
    table: Dict[str, ConceptInfo]

    def __post_init__(self):
        for info in self.table.values():
            if info.category not in CATEGORIES:
                raise InvalidArgumentError(f"unknown category {info.category!r}")
        for per_image in self.masks:
            for cid in per_image:
                if cid not in self.table:
                    raise InvalidArgumentError(f"mask concept {cid!r} missing from table")

    def __len__(self) -> int:
        return len(self.images)

    def concept_stack(self, concept_id: str) -> np.ndarray:
        """N×H×W bool stack of the concept's masks (absent = all-false)."""
        h, w = self.images.shape[1:3]
        empty = np.zeros((h, w), dtype=bool)
        return np.stack([m.get(concept_id, empty) for m in self.masks])


@dataclass
class CorpusConfig:
    num_images: int = 200
    image_size: int = 32


def generate_concept_corpus(config: CorpusConfig, rng: np.random.Generator) -> ConceptCorpus:
    """Procedural shape-on-texture corpus with object/part/material/color masks.

    Parts are the object's border ring and interior; material is the
    background's texture class; color is the object's dominant color.
    """
    if config.num_images <= 0 or config.image_size < 8:
        raise InvalidArgumentError("num_images must be positive and image_size ≥ 8")
    table: Dict[str, ConceptInfo] = {}
    for s in SHAPES:
        table[f"shape:{s}"] = ConceptInfo(f"shape:{s}", s, "object")
    for p in ("interior", "border"):
        table[f"part:{p}"] = ConceptInfo(f"part:{p}", p, "part")
    for t in TEXTURES:
        table[f"texture:{t}"] = ConceptInfo(f"texture:{t}", t, "material")
    for c in COLORS:
        table[f"color:{c}"] = ConceptInfo(f"color:{c}", c, "color")

    images = np.empty((config.num_images, config.image_size, config.image_size, 3), np.float32)
    masks: List[Dict[str, np.ndarray]] = []
    for i in range(config.num_images):
        scene = render_scene(rng, image_size=config.image_size)
        images[i] = scene.image
        interior = binary_erosion(scene.shape_mask, iterations=2)
        per_image = {
            f"shape:{scene.shape}": scene.shape_mask,
            f"part:interior": interior,
            f"part:border": scene.shape_mask & ~interior,
            f"texture:{scene.texture}": ~scene.shape_mask,
            f"color:{scene.color}": scene.shape_mask,
        }
        masks.append(per_image)
    return ConceptCorpus(images=images, masks=masks, table=table)


@dataclass
class UnitActivationProfile:
    unit: int
    threshold: float
    sample_count: int
    degenerate: bool = False     # quantile landed on a point mass (constant or
                                 # mostly-dead unit); coverage is unreliable


@dataclass
class DetectorRecord:
    unit: int
    concept_id: str
    category: str
    iou: float


def model_activation_fn(model: SmallResNet, stage_index: int = -1, batch_size: int = 128) -> ActivationFn:
    """Activations of a residual stage (default: the final convolutional stage)."""
    stage_index = stage_index % len(model.stages)

    def fn(images: np.ndarray) -> np.ndarray:
        model.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                out = model.stem(to_nchw(images[start : start + batch_size]))
                for stage in model.stages[: stage_index + 1]:
                    out = stage(out)
                outs.append(out.numpy())
        return np.concatenate(outs)

    return fn


def collect_profiles(
    activation_fn: ActivationFn, corpus: ConceptCorpus, quantile: float = 1.0 - TOP_QUANTILE
) -> List[UnitActivationProfile]:
    """Exact per-unit quantile threshold over all images and positions."""
    if len(corpus) == 0:
        raise InvalidArgumentError("corpus is empty")
    acts = activation_fn(corpus.images)                 # N×C×h×w
    n, c = acts.shape[:2]
    flat = acts.transpose(1, 0, 2, 3).reshape(c, -1)
    thresholds = np.quantile(flat, quantile, axis=1)
    profiles = []
    target = 1.0 - quantile
    for k in range(c):
        # ties at the threshold (a point mass, e.g. the zero atom of a unit
        # that is ReLU-dead almost everywhere) make the super-threshold
        # fraction deviate from the quantile target; flag those units
        above = float((flat[k] > thresholds[k]).mean())
        degenerate = bool(
            flat[k].max() == flat[k].min() or abs(above - target) > 0.5 * target
        )
        profiles.append(
            UnitActivationProfile(
                unit=k,
                threshold=float(thresholds[k]),
                sample_count=flat.shape[1],
                degenerate=degenerate,
            )
        )
    return profiles


def _unit_masks(
    activation_fn: ActivationFn, profiles: List[UnitActivationProfile], corpus: ConceptCorpus
) -> np.ndarray:
    """N×C×H×W boolean unit masks: upsampled activations above each T_k."""
    acts = torch.from_numpy(np.ascontiguousarray(activation_fn(corpus.images)))
    h, w = corpus.images.shape[1:3]
    up = F.interpolate(acts, size=(h, w), mode="bilinear", align_corners=False).numpy()
    thresholds = np.array([p.threshold for p in profiles], dtype=up.dtype)
    return up > thresholds[None, :, None, None]


def unit_coverage(
    activation_fn: ActivationFn, profiles: List[UnitActivationProfile], corpus: ConceptCorpus
) -> np.ndarray:
    """Per-unit fraction of super-threshold positions at feature resolution.

    Measured before upsampling: thresholding a bilinear interpolation does
    not preserve the super-threshold fraction (sharp peaks shrink), so the
    quantile target is only exact on the raw activations.
    """
    acts = activation_fn(corpus.images)
    thresholds = np.array([p.threshold for p in profiles], dtype=acts.dtype)
    return (acts > thresholds[None, :, None, None]).mean(axis=(0, 2, 3))


def unit_concept_iou(
    activation_fn: ActivationFn,
    unit: int,
    profile: UnitActivationProfile,
    corpus: ConceptCorpus,
    concept_id: str,
) -> float:
    """Dataset-wide IoU of one unit's mask against one concept's masks."""
    if concept_id not in corpus.table:
        raise InvalidArgumentError(f"unknown concept {concept_id!r}")
    acts = torch.from_numpy(activation_fn(corpus.images)[:, unit : unit + 1])
    h, w = corpus.images.shape[1:3]
    up = F.interpolate(acts, size=(h, w), mode="bilinear", align_corners=False).numpy()[:, 0]
    m = up > profile.threshold
    l = corpus.concept_stack(concept_id)
    union = np.logical_or(m, l).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(m, l).sum() / union)


def find_detectors(
    activation_fn: ActivationFn,
    corpus: ConceptCorpus,
    profiles: Optional[List[UnitActivationProfile]] = None,
    iou_threshold: float = DETECTOR_IOU_THRESHOLD,
    multi_concept: bool = False,
) -> List[DetectorRecord]:
    """Detector records per unit: the best concept by IoU when it exceeds the
    threshold, or every qualifying concept with ``multi_concept=True``."""
    if profiles is None:
        profiles = collect_profiles(activation_fn, corpus)
    m = _unit_masks(activation_fn, profiles, corpus)     # N×C×H×W
    m_sums = m.sum(axis=(0, 2, 3)).astype(np.int64)      # per unit
    records: List[DetectorRecord] = []
    ious = np.zeros((len(profiles), len(corpus.table)))
    concept_ids = list(corpus.table)
    for j, cid in enumerate(concept_ids):
        l = corpus.concept_stack(cid)                    # N×H×W
        inter = np.logical_and(m, l[:, None]).sum(axis=(0, 2, 3))
        l_sum = int(l.sum())
        union = m_sums + l_sum - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            ious[:, j] = np.where(union > 0, inter / union, 0.0)
    for k in range(len(profiles)):
        if multi_concept:
            for j, cid in enumerate(concept_ids):
                if ious[k, j] > iou_threshold:
                    records.append(
                        DetectorRecord(k, cid, corpus.table[cid].category, float(ious[k, j]))
                    )
        else:
            j = int(np.argmax(ious[k]))
            if ious[k, j] > iou_threshold:
                cid = concept_ids[j]
                records.append(
                    DetectorRecord(k, cid, corpus.table[cid].category, float(ious[k, j]))
                )
    return records


def count_unique_concepts(records: List[DetectorRecord]) -> Dict[str, int]:
    """Distinct concept ids among detector records, per category."""
    per_cat: Dict[str, set] = {c: set() for c in CATEGORIES}
    for rec in records:
        per_cat[rec.category].add(rec.concept_id)
    return {c: len(s) for c, s in per_cat.items()}
