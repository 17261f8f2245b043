"""Deterministic random-feature perceptual distance.

A fixed, seed-0, 4-stage stride-2 conv pyramid with unit-normalized channel
features; the distance is the mean squared difference of normalized features
averaged across stages.  Weights are frozen at construction, so the distance
is a reproducible metric, and the forward pass stays differentiable with
respect to its image inputs for use inside the training loss.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .errors import ShapeError

_STAGE_CHANNELS = (24, 48, 96, 96)
_SEED = 0
_EPS = 1e-10


class PerceptualProxy(nn.Module):
    def __init__(self, dtype: torch.dtype = torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(_SEED)
        in_ch = 3
        weights = []
        for out_ch in _STAGE_CHANNELS:
            # Canonical weights are float32 draws; widening to float64 is
            # exact, so both dtypes realize the same metric.
            w = torch.randn(out_ch, in_ch, 3, 3, generator=gen)
            w *= (2.0 / (in_ch * 9)) ** 0.5
            weights.append(w.to(dtype))
            in_ch = out_ch
        for i, w in enumerate(weights):
            self.register_buffer(f"weight{i}", w)
        self.num_stages = len(weights)

    def features(self, image: Tensor) -> list[Tensor]:
        if image.ndim == 3:
            image = image.unsqueeze(0)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) image, got {tuple(image.shape)}")
        h = image * 2.0 - 1.0
        feats = []
        for i in range(self.num_stages):
            w = getattr(self, f"weight{i}")
            h = F.leaky_relu(F.conv2d(h, w.to(image.dtype), stride=2, padding=1), 0.2)
            norm = h.square().sum(dim=1, keepdim=True).add(_EPS).sqrt()
            feats.append(h / norm)
        return feats

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        fa = self.features(a)
        fb = self.features(b)
        per_stage = [(x - y).square().mean() for x, y in zip(fa, fb)]
        return torch.stack(per_stage).mean()


_metric_instance: PerceptualProxy | None = None


def perceptual_distance(a: Tensor, b: Tensor) -> float:
    """Metric entry point on torch images in [0,1]; float64 evaluation."""
    global _metric_instance
    if _metric_instance is None:
        _metric_instance = PerceptualProxy(dtype=torch.float64)
    with torch.no_grad():
        return float(_metric_instance(a.double(), b.double()))
