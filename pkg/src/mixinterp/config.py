"""Flat key=value experiment configuration with a closed key set.

Unknown keys are errors (fail-fast). The config hash is a SHA-256 over the
canonical key=value listing and is stamped into every result record.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Tuple

from .errors import ConfigError


def _int_tuple(text: str) -> Tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    dataset_num_train: int = 1200
    dataset_num_eval: int = 400
    dataset_image_size: int = 32
    arch_depth: int = 8
    arch_width: int = 16
    train_epochs: int = 30
    train_batch_size: int = 128
    train_lr: float = 0.1
    train_momentum: float = 0.9
    train_weight_decay: float = 5e-4
    train_lr_decay_epochs: Tuple[int, ...] = (15, 25)
    train_lr_decay_factor: float = 0.1
    augment_prob: float = 1.0
    augment_cutout_patch_side: int = 0        # 0 → half the image side
    augment_mixup_alpha: float = 0.2
    augment_cutmix_alpha: float = 1.0
    augment_saliencymix_alpha: float = 1.0
    attribution_methods: str = "gradcam,iba"
    attribution_iba_beta: float = 10.0
    attribution_iba_steps: int = 10
    attribution_iba_lr: float = 1.0
    attribution_iba_samples: int = 10
    attribution_iba_stage: int = -2
    metrics_threshold_grid_size: int = 100
    metrics_threshold_grid_max: float = 0.99
    metrics_cell_px: int = 4
    metrics_n_orders: int = 5
    metrics_fill_policy: str = "dataset_mean"  # or image_mean
    metrics_wsol_threshold: float = 0.15
    metrics_iou_threshold: float = 0.04
    eval_num_samples: int = 200
    eval_score_min: float = 0.6
    eval_area_min: float = 0.10
    eval_area_max: float = 0.50
    dissect_num_images: int = 200

    def methods(self) -> Tuple[str, ...]:
        return tuple(m.strip() for m in self.attribution_methods.split(",") if m.strip())

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.train_epochs <= 0 or self.train_batch_size <= 0:
            raise ConfigError("train.epochs and train.batch_size must be positive")
        if self.metrics_fill_policy not in ("dataset_mean", "image_mean"):
            raise ConfigError(f"unknown fill policy {self.metrics_fill_policy!r}")
        for m in self.methods():
            if m not in ("gradcam", "iba"):
                raise ConfigError(f"unknown attribution method {m!r}")
        if not (0 <= self.eval_area_min < self.eval_area_max <= 1):
            raise ConfigError("eval area window must satisfy 0 ≤ min < max ≤ 1")


# file key → (attribute, parser); section prefix before the first underscore
_KEYMAP = {}
for f in fields(ExperimentConfig):
    if f.name in ("seed", "out_dir"):
        key = f.name
    else:
        key = f.name.replace("_", ".", 1)
    type_name = f.type if isinstance(f.type, str) else f.type.__name__
    if type_name == "int":
        parser = int
    elif type_name == "float":
        parser = float
    elif type_name == "str":
        parser = str
    else:
        parser = _int_tuple
    _KEYMAP[key] = (f.name, parser)


def parse_config(path: str | Path) -> ExperimentConfig:
    """Parse a flat key=value file. '#' starts a comment; blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYMAP:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, parser = _KEYMAP[key]
        try:
            setattr(cfg, attr, parser(value))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    cfg.validate()
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    parts = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        parts.append(f"{f.name}={getattr(cfg, f.name)!r}")
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()[:16]
