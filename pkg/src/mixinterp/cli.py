"""Command-line orchestration of the full experiment.

Subcommands: train, attribute, eval-align, eval-faith, dissect, report.
Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import alignment, attribution, dissection, faithfulness, report, tensorio
from .config import ExperimentConfig, config_hash, parse_config
from .data import make_classification_dataset
from .errors import (
    AttributionFailure,
    ConfigError,
    InvalidArgumentError,
    MissingArtifactError,
    TrainingFailure,
)
from .harness import (
    AUGMENTATIONS,
    ArchConfig,
    Hyperparams,
    ModelCheckpoint,
    SmallResNet,
    build_model,
    predict_classes,
    score_oracle,
    select_eval_samples,
    train,
)
from .results import ResultRecord, ResultStore


def _hyper(cfg: ExperimentConfig) -> Hyperparams:
    return Hyperparams(
        epochs=cfg.train_epochs,
        batch_size=cfg.train_batch_size,
        lr=cfg.train_lr,
        momentum=cfg.train_momentum,
        weight_decay=cfg.train_weight_decay,
        lr_decay_epochs=cfg.train_lr_decay_epochs,
        lr_decay_factor=cfg.train_lr_decay_factor,
        augment_prob=cfg.augment_prob,
        cutout_patch_side=cfg.augment_cutout_patch_side or None,
        mixup_alpha=cfg.augment_mixup_alpha,
        cutmix_alpha=cfg.augment_cutmix_alpha,
        saliencymix_alpha=cfg.augment_saliencymix_alpha,
    )


def _arch(cfg: ExperimentConfig) -> ArchConfig:
    return ArchConfig(depth=cfg.arch_depth, width=cfg.arch_width, num_classes=10)


def _train_dataset(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed)
    return make_classification_dataset(cfg.dataset_num_train, rng, cfg.dataset_image_size)


def _eval_dataset(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed + 10_000)
    return make_classification_dataset(cfg.dataset_num_eval, rng, cfg.dataset_image_size)


def _checkpoint_path(cfg: ExperimentConfig, regime: str) -> Path:
    return Path(cfg.out_dir) / "checkpoints" / f"{regime}.pt"


def _load_models(cfg: ExperimentConfig, regimes=AUGMENTATIONS) -> Dict[str, SmallResNet]:
    models = {}
    for regime in regimes:
        path = _checkpoint_path(cfg, regime)
        if not path.exists():
            raise MissingArtifactError(
                f"checkpoint for regime {regime!r} not found at {path}; run 'train' first"
            )
        models[regime] = ModelCheckpoint.load(path).build()
    return models


def cmd_train(cfg: ExperimentConfig, models: Optional[List[str]] = None) -> None:
    dataset = _train_dataset(cfg)
    regimes = models or list(AUGMENTATIONS)
    for regime in regimes:
        model = build_model(_arch(cfg), seed=cfg.seed)
        try:
            ckpt = train(
                model, dataset, regime, _hyper(cfg), seed=cfg.seed,
                checkpoint_path=_checkpoint_path(cfg, regime),
            )
        except TrainingFailure as exc:
            raise TrainingFailure(f"regime {regime!r}: {exc}", epoch=exc.epoch) from exc
        print(f"trained {regime}: accuracy {ckpt.final_accuracy:.3f}")


def _samples_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "eval_samples.npz"


def _map_path(cfg: ExperimentConfig, model: str, method: str, index: int) -> Path:
    return Path(cfg.out_dir) / "maps" / model / method / f"{index:04d}.map"


def cmd_attribute(cfg: ExperimentConfig) -> None:
    """Select the shared eval samples and persist one map per (model, method, sample)."""
    models = _load_models(cfg)
    dataset = _eval_dataset(cfg)
    rng = np.random.default_rng(cfg.seed + 20_000)
    samples = select_eval_samples(
        models, dataset, cfg.eval_num_samples, rng,
        score_min=cfg.eval_score_min, area_min=cfg.eval_area_min, area_max=cfg.eval_area_max,
    )
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples])
    boxes = np.array([s.boxes[0] for s in samples])
    path = _samples_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=images, labels=labels, boxes=boxes)

    stats_cache: Dict[str, attribution.FeatureStats] = {}
    calibration = _train_dataset(cfg).images[: max(100, cfg.train_batch_size)]
    for model_name, model in models.items():
        for method in cfg.methods():
            for i, sample in enumerate(samples):
                if method == "gradcam":
                    amap = attribution.gradcam(model, sample.image, sample.label)
                else:
                    if model_name not in stats_cache:
                        stats_cache[model_name] = attribution.iba_fit_statistics(
                            model, calibration, stage_index=cfg.attribution_iba_stage
                        )
                    amap = attribution.iba(
                        model, sample.image, sample.label, stats_cache[model_name],
                        beta=cfg.attribution_iba_beta, steps=cfg.attribution_iba_steps,
                        lr=cfg.attribution_iba_lr, noise_samples=cfg.attribution_iba_samples,
                        stage_index=cfg.attribution_iba_stage, seed=cfg.seed + i,
                    )
                tensorio.save_map(_map_path(cfg, model_name, method, i), amap)
        print(f"attributed {model_name}")


def _load_samples(cfg: ExperimentConfig):
    path = _samples_path(cfg)
    if not path.exists():
        raise MissingArtifactError(f"eval samples not found at {path}; run 'attribute' first")
    data = np.load(path)
    return data["images"], data["labels"], data["boxes"]


def _load_maps(cfg: ExperimentConfig, model: str, method: str, n: int):
    maps = []
    for i in range(n):
        path = _map_path(cfg, model, method, i)
        if not path.exists():
            raise MissingArtifactError(f"map not found at {path}; run 'attribute' first")
        maps.append(tensorio.load_map(path))
    return maps


def _store(cfg: ExperimentConfig) -> ResultStore:
    return ResultStore(Path(cfg.out_dir) / "results.jsonl")


def _record(cfg: ExperimentConfig, model: str, metric: str, value, se=None, payload=None):
    return ResultRecord(
        run_id=config_hash(cfg), config_hash=config_hash(cfg), model_id=model,
        metric=metric, value=value, se=se, payload=payload,
    )


def cmd_eval_align(cfg: ExperimentConfig) -> None:
    images, labels, boxes = _load_samples(cfg)
    store = _store(cfg)
    grid = alignment.ThresholdGrid.default(
        cfg.metrics_threshold_grid_size, cfg.metrics_threshold_grid_max
    )
    h, w = images.shape[1:3]
    for model in AUGMENTATIONS:
        for method in cfg.methods():
            maps = _load_maps(cfg, model, method, len(images))
            per_metric = {"energy_pg": [], "ehr": [], "wsol_iou": []}
            for amap, box in zip(maps, boxes):
                boxset = alignment.BoxSet([tuple(int(v) for v in box)], h, w)
                per_metric["energy_pg"].append(alignment.energy_pg(amap, boxset))
                per_metric["ehr"].append(alignment.ehr(amap, boxset, grid))
                per_metric["wsol_iou"].append(
                    alignment.wsol_iou(amap, boxset, cfg.metrics_wsol_threshold)[0]
                )
            for name, vals in per_metric.items():
                vals = np.asarray(vals)
                se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                store.append(
                    _record(cfg, model, f"{name}/{method}", float(vals.mean()), se)
                )
        print(f"alignment evaluated for {model}")


def cmd_eval_faith(cfg: ExperimentConfig) -> None:
    images, labels, boxes = _load_samples(cfg)
    models = _load_models(cfg)
    store = _store(cfg)
    fill = faithfulness.ReplacementPolicy.dataset_mean(_train_dataset(cfg).images)
    for model_name, model in models.items():
        oracle = lambda imgs, target: score_oracle(model, imgs, target)
        targets = predict_classes(model, images).tolist()
        for method in cfg.methods():
            maps = _load_maps(cfg, model_name, method, len(images))
            for mode in ("deletion", "insertion"):
                rng = np.random.default_rng(cfg.seed + 30_000)
                result = faithfulness.inter_model_score(
                    oracle, list(images), targets, maps, mode,
                    cell_px=cfg.metrics_cell_px,
                    fill=fill if cfg.metrics_fill_policy == "dataset_mean" else
                    faithfulness.ReplacementPolicy.image_mean(images[0]),
                    rng=rng, n_orders=cfg.metrics_n_orders,
                    model_id=model_name, method=method, config_hash=config_hash(cfg),
                )
                store.append(
                    _record(cfg, model_name, f"inter_model_{mode}/{method}", result.auc, result.se)
                )
                for kind, curve in (
                    ("attr", result.attr_curve), ("rao", result.rao_curve), ("diff", result.diff_curve)
                ):
                    payload = {"x": curve.x.tolist(), "y": curve.y.tolist()}
                    if curve.se is not None:
                        payload["se"] = curve.se.tolist()
                    store.append(
                        _record(cfg, model_name, f"curve/{mode}/{kind}/{method}", None, None, payload)
                    )
        print(f"faithfulness evaluated for {model_name}")


def cmd_dissect(cfg: ExperimentConfig) -> None:
    models = _load_models(cfg)
    store = _store(cfg)
    corpus = dissection.generate_concept_corpus(
        dissection.CorpusConfig(cfg.dissect_num_images, cfg.dataset_image_size),
        np.random.default_rng(cfg.seed + 40_000),
    )
    out = Path(cfg.out_dir) / "detectors"
    out.mkdir(parents=True, exist_ok=True)
    for model_name, model in models.items():
        fn = dissection.model_activation_fn(model)
        records = dissection.find_detectors(fn, corpus, iou_threshold=cfg.metrics_iou_threshold)
        counts = dissection.count_unique_concepts(records)
        with open(out / f"{model_name}.tsv", "w") as fh:
            fh.write("unit\tconcept\tcategory\tiou\n")
            for rec in records:
                fh.write(f"{rec.unit}\t{rec.concept_id}\t{rec.category}\t{rec.iou:.6f}\n")
        for category, count in counts.items():
            store.append(_record(cfg, model_name, f"concepts/{category}", float(count)))
        print(f"dissected {model_name}: {sum(counts.values())} unique concepts")


def cmd_report(cfg: ExperimentConfig) -> None:
    store = _store(cfg)
    records = store.load()
    if not records:
        raise MissingArtifactError("no result records to report on")
    out = Path(cfg.out_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    methods = cfg.methods()
    (out / "alignment.tsv").write_text(report.alignment_table(records, methods))
    (out / "wsol.tsv").write_text(report.wsol_table(records, methods))
    for mode in ("deletion", "insertion"):
        (out / f"faithfulness_{mode}.tsv").write_text(
            report.faithfulness_table(records, mode, methods)
        )
    (out / "concepts.tsv").write_text(report.concept_count_table(records))
    for method in methods:
        try:
            report.six_panel_figure(records, method, out / f"curves_{method}.pdf")
        except MissingArtifactError:
            pass
    if any(r.metric.startswith("concepts/") for r in records):
        report.concept_bar_figure(records, out / "concepts.pdf")
    samples_path = _samples_path(cfg)
    if samples_path.exists():
        images, labels, boxes = _load_samples(cfg)
        for method in methods:
            try:
                maps_by_model = {
                    m: [a.values for a in _load_maps(cfg, m, method, min(4, len(images)))]
                    for m in AUGMENTATIONS
                }
            except MissingArtifactError:
                continue
            report.qualitative_grid(
                images[:4], maps_by_model, [[tuple(b)] for b in boxes[:4]],
                out / f"qualitative_{method}.pdf",
            )
    print(f"report written to {out}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mixinterp",
        description="Train classifiers under mixed-sample augmentation and "
        "quantify their interpretability.",
    )
    parser.add_argument("--config", required=True, help="path to the flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_train = sub.add_parser("train", help="train the five augmentation regimes")
    p_train.add_argument("--models", default=None, help="comma-separated regime subset")
    sub.add_parser("attribute", help="select eval samples and compute attribution maps")
    sub.add_parser("eval-align", help="alignment metrics (energy_pg, ehr, wsol_iou)")
    sub.add_parser("eval-faith", help="inter-model deletion/insertion scores")
    sub.add_parser("dissect", help="network dissection concept counts")
    sub.add_parser("report", help="emit tables and figures from records")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        cfg.validate()
        if args.command == "train":
            models = args.models.split(",") if args.models else None
            cmd_train(cfg, models)
        elif args.command == "attribute":
            cmd_attribute(cfg)
        elif args.command == "eval-align":
            cmd_eval_align(cfg)
        elif args.command == "eval-faith":
            cmd_eval_faith(cfg)
        elif args.command == "dissect":
            cmd_dissect(cfg)
        elif args.command == "report":
            cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except (TrainingFailure, AttributionFailure, InvalidArgumentError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
