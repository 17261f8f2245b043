"""Latent adapter and denoising U-Net.

The adapter fuses the residual branch (x_tilde - y) with the base branch (y)
by channel concatenation followed by a single convolution; the U-Net, which
is the only consumer of the fused tensor, predicts the clean latent directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .autoencoder import seeded_init
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class UNetConfig:
    base_width: int = 192
    num_scales: int = 3
    time_embed_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.num_scales < 2:
            raise ConfigError("U-Net needs at least 2 scales")
        if self.base_width < 4 or self.time_embed_dim < 4:
            raise ConfigError("widths must be positive and at least 4")

    def scale_width(self, scale: int) -> int:
        return self.base_width if scale == 0 else 2 * self.base_width


def fuse_inputs(x_tilde: Tensor, y: Tensor) -> Tensor:
    """Channel-concatenate (residual, base); fixed order (x_tilde - y, y)."""
    if x_tilde.shape != y.shape:
        raise ShapeError(
            f"shape mismatch {tuple(x_tilde.shape)} vs {tuple(y.shape)}")
    return torch.cat([x_tilde - y, y], dim=-3)


class LatentAdapter(nn.Module):
    """conv(concat(x_tilde - y, y)): 2d channels in, U-Net width out."""

    def __init__(self, latent_dim: int, out_width: int, seed: int = 0):
        super().__init__()
        self.latent_dim = latent_dim
        self.conv = nn.Conv2d(2 * latent_dim, out_width, 3, padding=1)
        seeded_init(self, seed)

    def forward(self, x_tilde: Tensor, y: Tensor) -> Tensor:
        if x_tilde.shape[-3] != self.latent_dim:
            raise ShapeError(
                f"expected {self.latent_dim} latent channels, "
                f"got {x_tilde.shape[-3]}")
        return self.conv(fuse_inputs(x_tilde, y))


def time_embedding(t: Tensor, dim: int) -> Tensor:
    """Sinusoidal embedding of integer step indices, shape (len(t), dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double().reshape(-1, 1) * freqs.reshape(1, -1)
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = (nn.Conv2d(in_ch, out_ch, 1)
                     if in_ch != out_ch else nn.Identity())

    def forward(self, h: Tensor, temb: Tensor) -> Tensor:
        r = self.conv1(F.silu(self.norm1(h)))
        r = r + self.time_proj(F.silu(temb))[:, :, None, None]
        r = self.conv2(F.silu(self.norm2(r)))
        return self.skip(h) + r


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class DenoiseUNet(nn.Module):
    """Predicts the clean latent from the fused adapter output."""

    def __init__(self, config: UNetConfig, out_channels: int):
        super().__init__()
        self.config = config
        self.out_channels = out_channels
        tdim = config.time_embed_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))

        widths = [config.scale_width(s) for s in range(config.num_scales)]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for s, w in enumerate(widths):
            in_w = widths[0] if s == 0 else widths[s - 1]
            self.down_blocks.append(nn.ModuleList([
                TimeResBlock(in_w, w, tdim),
                TimeResBlock(w, w, tdim)]))
            if s < config.num_scales - 1:
                self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))

        deep = widths[-1]
        self.mid = nn.ModuleList([TimeResBlock(deep, deep, tdim),
                                  TimeResBlock(deep, deep, tdim)])

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for s in range(config.num_scales - 2, -1, -1):
            w = widths[s]
            self.upsamples.append(nn.Conv2d(widths[s + 1], w, 3, padding=1))
            self.up_blocks.append(nn.ModuleList([
                TimeResBlock(2 * w, w, tdim),
                TimeResBlock(w, w, tdim)]))

        self.out_norm = nn.GroupNorm(_groups(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], out_channels, 3, padding=1)
        seeded_init(self, config.seed)

    def forward(self, z: Tensor, t: int | Tensor) -> Tensor:
        squeeze = z.ndim == 3
        if squeeze:
            z = z.unsqueeze(0)
        if z.ndim != 4 or z.shape[1] != self.config.base_width:
            raise ShapeError(
                f"expected fused input with {self.config.base_width} channels, "
                f"got {tuple(z.shape)}")
        if isinstance(t, int):
            t = torch.full((z.shape[0],), t)
        temb = self.time_mlp(
            time_embedding(t, self.config.time_embed_dim).to(z.dtype))

        skips = []
        h = z
        for s, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, temb)
            if s < self.config.num_scales - 1:
                skips.append(h)
                h = self.downsamples[s](h)
        for block in self.mid:
            h = block(h, temb)
        for up, blocks in zip(self.upsamples, self.up_blocks):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, temb)
        out = self.out_conv(F.silu(self.out_norm(h)))
        return out.squeeze(0) if squeeze else out


class FusionDenoiser(nn.Module):
    """f(x_tilde, y, t) = UNet(Adapter(x_tilde, y), t).

    y enters the U-Net only through the adapter.
    """

    def __init__(self, latent_dim: int, config: UNetConfig):
        super().__init__()
        self.adapter = LatentAdapter(latent_dim, config.base_width,
                                     seed=config.seed + 1)
        self.unet = DenoiseUNet(config, out_channels=latent_dim)

    def forward(self, x_tilde: Tensor, y: Tensor, t: int = 1) -> Tensor:
        return self.unet(self.adapter(x_tilde, y), t)
