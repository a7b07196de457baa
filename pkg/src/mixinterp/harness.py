"""Small residual CNNs, their training loop, and the batched score oracle.

Models are desk-scale ResNets on 32×32 inputs. Training supports the five
regimes (baseline, cutout, mixup, cutmix, saliencymix) with the soft-label
loss ``mix_weight·CE(label_a) + (1-mix_weight)·CE(label_b)``. Checkpoints
are a single file holding a JSON-serializable architecture descriptor,
training metadata, and the parameter state dict.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import augment
from .data import BoxDataset
from .errors import InvalidArgumentError, MissingArtifactError, TrainingFailure

AUGMENTATIONS = ("baseline", "cutout", "mixup", "cutmix", "saliencymix")


@dataclass
class ArchConfig:
    depth: int = 8           # 6n+2 layout: n residual blocks per stage
    width: int = 16          # channels of the first stage; doubles per stage
    num_classes: int = 10
    in_channels: int = 3


@dataclass
class Hyperparams:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: Tuple[int, ...] = (15, 25)
    lr_decay_factor: float = 0.1
    augment_prob: float = 1.0
    cutout_patch_side: Optional[int] = None   # default: half the image side
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 1.0
    saliencymix_alpha: float = 1.0


@dataclass
class TrainLogEntry:
    epoch: int
    loss: float
    accuracy: float


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class SmallResNet(nn.Module):
    """Residual CNN with global-average-pool head.

    ``self.last_conv_stage`` names the final convolutional stage whose
    activations/gradients attribution methods hook into; ``self.stages``
    is indexable so a bottleneck can be inserted after any stage.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        if arch.depth < 8 or (arch.depth - 2) % 6 != 0:
            raise InvalidArgumentError(f"depth must be 6n+2 with n ≥ 1, got {arch.depth}")
        if arch.width <= 0 or arch.num_classes <= 0 or arch.in_channels <= 0:
            raise InvalidArgumentError("width, num_classes and in_channels must be positive")
        self.arch = arch
        n = (arch.depth - 2) // 6
        widths = (arch.width, arch.width * 2, arch.width * 4)
        self.stem = nn.Sequential(
            nn.Conv2d(arch.in_channels, widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = widths[0]
        for i, w in enumerate(widths):
            blocks = []
            for j in range(n):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(in_ch, w, stride))
                in_ch = w
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(in_ch, arch.num_classes)

    @property
    def last_conv_stage(self) -> nn.Module:
        return self.stages[-1]

    def forward(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        x = x.mean(dim=(2, 3))
        return self.head(x)


def build_model(arch: ArchConfig, seed: int = 0) -> SmallResNet:
    """Deterministically initialized model for the given architecture."""
    torch.manual_seed(seed)
    return SmallResNet(arch)


def to_nchw(images: np.ndarray) -> torch.Tensor:
    """N×H×W×C float numpy → N×C×H×W float32 tensor."""
    if images.ndim == 3:
        images = images[None]
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


@dataclass
class ModelCheckpoint:
    arch: ArchConfig
    state_dict: Dict[str, torch.Tensor]
    augmentation: str
    seed: int
    epochs: int
    final_accuracy: float
    train_log: List[TrainLogEntry] = field(default_factory=list)

    def build(self) -> SmallResNet:
        model = SmallResNet(self.arch)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "arch": asdict(self.arch),
            "augmentation": self.augmentation,
            "seed": self.seed,
            "epochs": self.epochs,
            "final_accuracy": self.final_accuracy,
            "train_log": [asdict(e) for e in self.train_log],
        }
        torch.save({"header": json.dumps(header), "state_dict": self.state_dict}, path)

    @staticmethod
    def load(path: str | Path) -> "ModelCheckpoint":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"checkpoint not found: {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        header = json.loads(blob["header"])
        return ModelCheckpoint(
            arch=ArchConfig(**header["arch"]),
            state_dict=blob["state_dict"],
            augmentation=header["augmentation"],
            seed=header["seed"],
            epochs=header["epochs"],
            final_accuracy=header["final_accuracy"],
            train_log=[TrainLogEntry(**e) for e in header["train_log"]],
        )


def _augment_batch(
    images: np.ndarray,
    labels: np.ndarray,
    name: str,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Apply one regime to a batch; partners come from a uniform permutation.

    Returns (images, labels_a, labels_b, mix_weight). Cut boxes and the mix
    ratio are drawn once per batch; cutout centers are per sample.
    """
    h, w = images.shape[1:3]
    if name == "baseline" or rng.random() > hyper.augment_prob:
        return images, labels, labels, 1.0
    if name == "cutout":
        side = hyper.cutout_patch_side or h // 2
        out = images.copy()
        for i in range(len(out)):
            res = augment.cutout(out[i], side, rng, label=int(labels[i]))
            out[i] = res.image
        return out, labels, labels, 1.0
    perm = rng.permutation(len(images))
    partners = images[perm]
    if name == "mixup":
        lam = float(rng.beta(hyper.mixup_alpha, hyper.mixup_alpha))
        return lam * images + (1 - lam) * partners, labels, labels[perm], lam
    if name in ("cutmix", "saliencymix"):
        alpha = hyper.cutmix_alpha if name == "cutmix" else hyper.saliencymix_alpha
        lam = float(rng.beta(alpha, alpha))
        if name == "cutmix":
            box, mix_weight = augment.sample_cut_box(lam, w, h, rng)
        else:
            field_ = augment.fine_grained_saliency(partners[0])
            cy, cx = divmod(int(np.argmax(field_)), w)
            box, mix_weight = augment.sample_cut_box(lam, w, h, rng, center=(cx, cy))
        x0, y0, x1, y1 = box
        out = images.copy()
        out[:, y0:y1, x0:x1, :] = partners[:, y0:y1, x0:x1, :]
        return out, labels, labels[perm], mix_weight
    raise InvalidArgumentError(f"unknown augmentation {name!r}")


def mixed_cross_entropy(
    logits: torch.Tensor, labels_a: torch.Tensor, labels_b: torch.Tensor, mix_weight: float
) -> torch.Tensor:
    return mix_weight * F.cross_entropy(logits, labels_a) + (1.0 - mix_weight) * F.cross_entropy(
        logits, labels_b
    )


def train(
    model: SmallResNet,
    dataset: BoxDataset,
    augmentation: str,
    hyper: Hyperparams,
    seed: int,
    checkpoint_path: Optional[str | Path] = None,
) -> ModelCheckpoint:
    """Train under one augmentation regime; persists a checkpoint if a path is given."""
    if len(dataset) == 0:
        raise InvalidArgumentError("dataset is empty")
    if augmentation not in AUGMENTATIONS:
        raise InvalidArgumentError(f"augmentation must be one of {AUGMENTATIONS}, got {augmentation!r}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.SGD(
        model.parameters(), lr=hyper.lr, momentum=hyper.momentum, weight_decay=hyper.weight_decay
    )
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=list(hyper.lr_decay_epochs), gamma=hyper.lr_decay_factor
    )
    n = len(dataset)
    log: List[TrainLogEntry] = []
    model.train()
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total_loss, total_correct = 0.0, 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            imgs = dataset.images[idx]
            labs = dataset.labels[idx]
            imgs, labs_a, labs_b, mix_weight = _augment_batch(imgs, labs, augmentation, hyper, rng)
            x = to_nchw(imgs)
            ta = torch.from_numpy(labs_a)
            tb = torch.from_numpy(labs_b)
            logits = model(x)
            loss = mixed_cross_entropy(logits, ta, tb, mix_weight)
            if not torch.isfinite(loss):
                raise TrainingFailure(f"non-finite loss at epoch {epoch}", epoch=epoch)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * len(idx)
            total_correct += int((logits.argmax(1) == ta).sum())
        sched.step()
        log.append(
            TrainLogEntry(epoch=epoch, loss=total_loss / n, accuracy=total_correct / n)
        )
    model.eval()
    acc = evaluate_accuracy(model, dataset)
    ckpt = ModelCheckpoint(
        arch=model.arch,
        state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
        augmentation=augmentation,
        seed=seed,
        epochs=hyper.epochs,
        final_accuracy=acc,
        train_log=log,
    )
    if checkpoint_path is not None:
        ckpt.save(checkpoint_path)
    return ckpt


def evaluate_accuracy(model: SmallResNet, dataset: BoxDataset, batch_size: int = 256) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = to_nchw(dataset.images[start : start + batch_size])
            pred = model(x).argmax(1).numpy()
            correct += int((pred == dataset.labels[start : start + batch_size]).sum())
    return correct / len(dataset)


def score_oracle(
    model: SmallResNet, images: np.ndarray, target_class: int, batch_size: int = 256
) -> np.ndarray:
    """Softmax probability of ``target_class`` for each image, batched."""
    if not 0 <= target_class < model.arch.num_classes:
        raise InvalidArgumentError(f"class {target_class} out of range")
    model.eval()
    scores = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = to_nchw(images[start : start + batch_size])
            probs = F.softmax(model(x), dim=1)
            scores.append(probs[:, target_class].numpy())
    return np.concatenate(scores)


def predict_classes(model: SmallResNet, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            preds.append(model(to_nchw(images[start : start + batch_size])).argmax(1).numpy())
    return np.concatenate(preds)


def input_gradient(model: SmallResNet, image: np.ndarray, target_class: int) -> np.ndarray:
    """Gradient of the pre-softmax class score w.r.t. the input image (H×W×C)."""
    model.eval()
    dtype = next(model.parameters()).dtype
    arr = image[None] if image.ndim == 3 else image
    x = (
        torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
        .to(dtype)
        .requires_grad_(True)
    )
    score = model(x)[0, target_class]
    score.backward()
    return x.grad[0].permute(1, 2, 0).numpy()


@dataclass
class EvalSample:
    image: np.ndarray
    label: int
    boxes: List[Tuple[int, int, int, int]]
    area_fraction: float
    scores: Dict[str, float]     # per-model top-1 probability of the true class


def box_union_fraction(boxes: Sequence[Tuple[int, int, int, int]], height: int, width: int) -> float:
    mask = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in boxes:
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise InvalidArgumentError(f"box {(x0, y0, x1, y1)} outside {width}×{height} image")
        mask[y0:y1, x0:x1] = True
    return float(mask.mean())


def select_eval_samples(
    models: Dict[str, SmallResNet],
    dataset: BoxDataset,
    n: int,
    rng: np.random.Generator,
    score_min: float = 0.6,
    area_min: float = 0.10,
    area_max: float = 0.50,
) -> List[EvalSample]:
    """Random n samples scoring > score_min on every model, with box-union
    area fraction strictly inside (area_min, area_max)."""
    height, width = dataset.images.shape[1:3]
    per_model: Dict[str, np.ndarray] = {}
    for name, model in models.items():
        model.eval()
        probs = []
        with torch.no_grad():
            for start in range(0, len(dataset), 256):
                x = to_nchw(dataset.images[start : start + 256])
                p = F.softmax(model(x), dim=1).numpy()
                probs.append(p[np.arange(len(p)), dataset.labels[start : start + 256]])
        per_model[name] = np.concatenate(probs)

    candidates = []
    for i in range(len(dataset)):
        frac = box_union_fraction(dataset.boxes[i], height, width)
        if not (area_min < frac < area_max):
            continue
        if all(per_model[m][i] > score_min for m in models):
            candidates.append((i, frac))
    if len(candidates) < n:
        raise InvalidArgumentError(
            f"only {len(candidates)} of {len(dataset)} samples pass the filters, need {n}"
        )
    chosen = rng.choice(len(candidates), size=n, replace=False)
    out = []
    for j in sorted(int(c) for c in chosen):
        i, frac = candidates[j]
        out.append(
            EvalSample(
                image=dataset.images[i],
                label=int(dataset.labels[i]),
                boxes=list(dataset.boxes[i]),
                area_fraction=frac,
                scores={m: float(per_model[m][i]) for m in models},
            )
        )
    return out
