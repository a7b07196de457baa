"""Report emitters: delimited tables and vector plots regenerated from records."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import MissingArtifactError
from .harness import AUGMENTATIONS
from .results import ResultRecord

_PANEL_ORDER = [
    ("deletion", "attr", "(a) LeRF deletion"),
    ("deletion", "rao", "(b) RaO deletion"),
    ("deletion", "diff", "(c) Inter-model deletion"),
    ("insertion", "attr", "(d) MoRF insertion"),
    ("insertion", "rao", "(e) RaO insertion"),
    ("insertion", "diff", "(f) Inter-model insertion"),
]


def _scalar(records: Sequence[ResultRecord], model: str, metric: str) -> Optional[ResultRecord]:
    for rec in records:
        if rec.model_id == model and rec.metric == metric:
            return rec
    return None


def _fmt(rec: Optional[ResultRecord]) -> str:
    if rec is None or rec.value is None:
        return "-"
    if rec.se is not None:
        return f"{rec.value:.3f}±{rec.se:.4f}"
    return f"{rec.value:.3f}"


def alignment_table(records: Sequence[ResultRecord], methods: Sequence[str]) -> str:
    """Five models × (energy_pg, ehr) per attribution method, tab-separated."""
    header = ["model"]
    for m in methods:
        header += [f"energy_pg/{m}", f"ehr/{m}"]
    lines = ["\t".join(header)]
    for model in AUGMENTATIONS:
        row = [model]
        for m in methods:
            row.append(_fmt(_scalar(records, model, f"energy_pg/{m}")))
            row.append(_fmt(_scalar(records, model, f"ehr/{m}")))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def wsol_table(records: Sequence[ResultRecord], methods: Sequence[str]) -> str:
    header = ["model"] + [f"wsol_iou/{m}" for m in methods]
    lines = ["\t".join(header)]
    for model in AUGMENTATIONS:
        row = [model] + [_fmt(_scalar(records, model, f"wsol_iou/{m}")) for m in methods]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def faithfulness_table(
    records: Sequence[ResultRecord], mode: str, methods: Sequence[str]
) -> str:
    header = ["model"] + [f"inter_model_{mode}/{m}" for m in methods]
    lines = ["\t".join(header)]
    for model in AUGMENTATIONS:
        row = [model]
        for m in methods:
            row.append(_fmt(_scalar(records, model, f"inter_model_{mode}/{m}")))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def concept_count_table(records: Sequence[ResultRecord]) -> str:
    categories = ("object", "part", "material", "color")
    header = ["model"] + list(categories)
    lines = ["\t".join(header)]
    for model in AUGMENTATIONS:
        row = [model]
        for cat in categories:
            rec = _scalar(records, model, f"concepts/{cat}")
            row.append(str(int(rec.value)) if rec and rec.value is not None else "-")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _curve_payload(
    records: Sequence[ResultRecord], model: str, metric: str
) -> Optional[Dict]:
    rec = _scalar(records, model, metric)
    return rec.payload if rec else None


def six_panel_figure(records: Sequence[ResultRecord], method: str, path: str | Path) -> None:
    """Six panels (a)-(f): LeRF/MoRF, RaO and difference curves per mode."""
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    drew_any = False
    for ax, (mode, kind, title) in zip(axes.ravel(), _PANEL_ORDER):
        for model in AUGMENTATIONS:
            payload = _curve_payload(records, model, f"curve/{mode}/{kind}/{method}")
            if payload is None:
                continue
            ax.plot(payload["x"], payload["y"], label=model)
            drew_any = True
        ax.set_title(title)
        ax.set_xlabel(f"fraction {'removed' if mode == 'deletion' else 'inserted'}")
        ax.set_ylabel("normalized model score")
    if not drew_any:
        plt.close(fig)
        raise MissingArtifactError(f"no curve records for method {method!r}")
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def concept_bar_figure(records: Sequence[ResultRecord], path: str | Path) -> None:
    categories = ("object", "part", "material", "color")
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.15
    xs = np.arange(len(categories))
    for i, model in enumerate(AUGMENTATIONS):
        counts = []
        for cat in categories:
            rec = _scalar(records, model, f"concepts/{cat}")
            counts.append(rec.value if rec and rec.value is not None else 0)
        ax.bar(xs + i * width, counts, width=width, label=model)
    ax.set_xticks(xs + 2 * width)
    ax.set_xticklabels(categories)
    ax.set_ylabel("unique concepts")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def qualitative_grid(
    images: np.ndarray,
    maps_by_model: Dict[str, List[np.ndarray]],
    boxes: Sequence[Sequence[tuple]],
    path: str | Path,
    max_rows: int = 4,
) -> None:
    """Heatmap overlays per model with ground-truth boxes drawn in red."""
    models = list(maps_by_model)
    rows = min(max_rows, len(images))
    fig, axes = plt.subplots(rows, len(models) + 1, figsize=(2.2 * (len(models) + 1), 2.2 * rows))
    axes = np.atleast_2d(axes)
    for r in range(rows):
        axes[r, 0].imshow(images[r])
        axes[r, 0].set_ylabel(f"sample {r}", fontsize=8)
        for c, model in enumerate(models, start=1):
            ax = axes[r, c]
            ax.imshow(images[r])
            ax.imshow(maps_by_model[model][r], cmap="jet", alpha=0.5)
            if r == 0:
                ax.set_title(model, fontsize=9)
        for ax in axes[r]:
            for x0, y0, x1, y1 in boxes[r]:
                ax.add_patch(
                    plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0,
                                  fill=False, edgecolor="red", linewidth=1.5)
                )
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
