"""Attribution maps from a trained model: GradCAM and information-bottleneck
attribution (IBA).

Both methods return an ``AttributionMap`` at input resolution, non-negative
and min-max normalized to [0, 1] by default (the alignment metrics assume a
[0, 1] scale).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AttributionFailure, InvalidArgumentError
from .harness import SmallResNet, to_nchw


@dataclass
class AttributionMap:
    values: np.ndarray          # H×W float32, ≥ 0
    target_class: int
    method: str                 # "gradcam" or "iba"
    normalized: bool = False


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; an all-constant map becomes all-zero. Idempotent."""
    values = values.astype(np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values, dtype=np.float32)
    return ((values - lo) / (hi - lo)).astype(np.float32)


def _upsample(values: torch.Tensor, height: int, width: int) -> torch.Tensor:
    return F.interpolate(
        values[None, None], size=(height, width), mode="bilinear", align_corners=False
    )[0, 0]


def gradcam(
    model: SmallResNet,
    image: np.ndarray,
    target_class: int,
    layer: Optional[nn.Module] = None,
) -> AttributionMap:
    """ReLU-weighted activation map of the last conv stage, gradient-weighted.

    Channel weights are the spatial mean of the gradient of the pre-softmax
    class score w.r.t. the layer activations.
    """
    if not 0 <= target_class < model.arch.num_classes:
        raise InvalidArgumentError(f"class {target_class} out of range")
    model.eval()
    layer = layer if layer is not None else model.last_conv_stage
    acts: List[torch.Tensor] = []
    grads: List[torch.Tensor] = []

    def grab(module, inputs, output):
        acts.append(output)
        output.register_hook(grads.append)

    h1 = layer.register_forward_hook(grab)
    try:
        x = to_nchw(image)
        model.zero_grad(set_to_none=True)
        logits = model(x)
        logits[0, target_class].backward()
    finally:
        h1.remove()
    a, g = acts[0][0], grads[0][0]          # C×h×w
    weights = g.mean(dim=(1, 2))
    cam = F.relu((weights[:, None, None] * a).sum(dim=0))
    cam = _upsample(cam, image.shape[0], image.shape[1])
    return AttributionMap(
        values=normalize(cam.detach().numpy()),
        target_class=target_class,
        method="gradcam",
        normalized=True,
    )


@dataclass
class FeatureStats:
    mean: np.ndarray            # per channel
    std: np.ndarray             # per channel, floored at eps
    sample_count: int
    degenerate: bool = False    # any channel hit the std floor


def _stage_features(model: SmallResNet, x: torch.Tensor, stage_index: int) -> torch.Tensor:
    """Activations after ``stages[stage_index]``."""
    out = model.stem(x)
    for stage in model.stages[: stage_index + 1]:
        out = stage(out)
    return out


def _tail_forward(model: SmallResNet, feats: torch.Tensor, stage_index: int) -> torch.Tensor:
    out = feats
    for stage in model.stages[stage_index + 1 :]:
        out = stage(out)
    return model.head(out.mean(dim=(2, 3)))


def iba_fit_statistics(
    model: SmallResNet,
    calibration_images: np.ndarray,
    stage_index: int = -2,
    batch_size: int = 256,
    eps: float = 1e-6,
) -> FeatureStats:
    """Per-channel mean/std of bottleneck activations over a calibration set."""
    if len(calibration_images) == 0:
        raise InvalidArgumentError("calibration set is empty")
    stage_index = stage_index % len(model.stages)
    model.eval()
    total = torch.zeros(0)
    total_sq = torch.zeros(0)
    count = 0
    with torch.no_grad():
        for start in range(0, len(calibration_images), batch_size):
            feats = _stage_features(
                model, to_nchw(calibration_images[start : start + batch_size]), stage_index
            )
            flat = feats.permute(1, 0, 2, 3).reshape(feats.shape[1], -1)
            if total.numel() == 0:
                total = torch.zeros(feats.shape[1], dtype=torch.float64)
                total_sq = torch.zeros(feats.shape[1], dtype=torch.float64)
            total += flat.sum(dim=1, dtype=torch.float64)
            total_sq += (flat.double() ** 2).sum(dim=1)
            count += flat.shape[1]
    mean = (total / count).numpy()
    var = np.maximum((total_sq / count).numpy() - mean**2, 0.0)
    std = np.sqrt(var)
    degenerate = bool((std < eps).any())
    return FeatureStats(
        mean=mean.astype(np.float32),
        std=np.maximum(std, eps).astype(np.float32),
        sample_count=count,
        degenerate=degenerate,
    )


def iba(
    model: SmallResNet,
    image: np.ndarray,
    target_class: int,
    stats: FeatureStats,
    beta: float = 10.0,
    steps: int = 10,
    lr: float = 1.0,
    noise_samples: int = 10,
    stage_index: int = -2,
    seed: int = 0,
    return_mask_mean: bool = False,
):
    """Per-position information bottleneck at a residual stage.

    Optimizes a spatial mask m ∈ [0,1] (shared across channels) so that
    ``m·f + (1-m)·(μ + σ·ε)`` still supports the target class while the
    KL divergence to the pure-noise prior is penalized with weight beta.
    Returns the per-position KL (information) map, upsampled and normalized.
    """
    if beta <= 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    if steps < 1:
        raise InvalidArgumentError(f"steps must be ≥ 1, got {steps}")
    if not 0 <= target_class < model.arch.num_classes:
        raise InvalidArgumentError(f"class {target_class} out of range")
    stage_index = stage_index % len(model.stages)
    model.eval()
    gen = torch.Generator().manual_seed(seed)

    x = to_nchw(image)
    with torch.no_grad():
        feats = _stage_features(model, x, stage_index)
    mu = torch.from_numpy(stats.mean).view(1, -1, 1, 1)
    sigma = torch.from_numpy(stats.std).view(1, -1, 1, 1)

    # logit init at +5 keeps the mask near-open at the start. Plain SGD so the
    # step size scales with the compression pressure (with adaptive optimizers
    # the loss balance degenerates to a sign test at desk scale).
    mask_logits = torch.full(feats.shape[-2:], 5.0, requires_grad=True)
    opt = torch.optim.SGD([mask_logits], lr=lr)
    target = torch.tensor([target_class])

    for _ in range(steps):
        m = torch.sigmoid(mask_logits)[None, None]
        ce_total = 0.0
        for _ in range(noise_samples):
            eps_noise = torch.randn(feats.shape, generator=gen)
            masked = m * feats + (1 - m) * (mu + sigma * eps_noise)
            logits = _tail_forward(model, masked, stage_index)
            ce_total = ce_total + F.cross_entropy(logits, target)
        ce = ce_total / noise_samples
        kl = _mask_kl(m, feats, mu, sigma)
        loss = ce + beta * kl.mean()
        if not torch.isfinite(loss):
            raise AttributionFailure("non-finite IBA loss")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    with torch.no_grad():
        m = torch.sigmoid(mask_logits)[None, None]
        info = _mask_kl(m, feats, mu, sigma).sum(dim=1)[0]   # h×w, sum over channels
        info_map = _upsample(torch.clamp(info, min=0.0), image.shape[0], image.shape[1])
        mask_mean = float(m.mean())
        total_information = float(info.sum())

    amap = AttributionMap(
        values=normalize(info_map.numpy()),
        target_class=target_class,
        method="iba",
        normalized=True,
    )
    if return_mask_mean:
        return amap, mask_mean, total_information
    return amap


def _mask_kl(
    m: torch.Tensor, feats: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor
) -> torch.Tensor:
    """Analytic KL( N(m·f + (1-m)μ, (1-m)²σ²) ‖ N(μ, σ²) ) per element."""
    keep = torch.clamp(1 - m, min=1e-6)
    z = (feats - mu) / sigma
    return -torch.log(keep) + 0.5 * (keep**2 + (m * z) ** 2) - 0.5
