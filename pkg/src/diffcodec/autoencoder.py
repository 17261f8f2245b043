"""Small convolutional autoencoder mapping RGB images to a latent grid.

The encoder downsamples by a configurable power-of-two factor (8 or 16)
through stride-2 convolutions; the decoder mirrors it with nearest-neighbor
upsampling.  Channel widths shrink toward full resolution so decode stays
cheap relative to the denoiser that runs on the latent grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AutoencoderConfig:
    downsample_factor: int = 16
    channel_width: int = 64
    latent_dim: int = 8
    num_res_blocks: int = 2
    seed: int = 0

    def __post_init__(self):
        f = self.downsample_factor
        if f not in (8, 16):
            raise ConfigError(f"downsample factor must be 8 or 16, got {f}")
        if self.latent_dim < 1:
            raise ConfigError("latent dim must be >= 1")
        if self.channel_width < 4:
            raise ConfigError("channel width must be >= 4")
        if self.num_res_blocks < 1:
            raise ConfigError("need at least one residual block")

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.downsample_factor))

    def stage_width(self, level: int) -> int:
        """Channel width at resolution level (0 = latent, num_stages = full)."""
        return max(12, self.channel_width >> level)

    def stage_blocks(self, level: int) -> int:
        if level == 0:
            return self.num_res_blocks
        if level == 1:
            return max(self.num_res_blocks - 1, 1)
        return 0


def _norm_groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(channels), channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(_norm_groups(channels), channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, h: Tensor) -> Tensor:
        r = self.conv1(torch.nn.functional.silu(self.norm1(h)))
        r = self.conv2(torch.nn.functional.silu(self.norm2(r)))
        return h + r


def seeded_init(module: nn.Module, seed: int) -> None:
    """Deterministically re-initialize every conv/linear in the module."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=gen)
            if m.bias is not None:
                bound = 1 / math.sqrt(m.weight.shape[1:].numel())
                nn.init.uniform_(m.bias, -bound, bound, generator=gen)


class Encoder(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        s = config.num_stages
        layers: list[nn.Module] = [
            nn.Conv2d(3, config.stage_width(s), 3, padding=1)]
        for level in range(s - 1, -1, -1):
            layers.append(nn.Conv2d(config.stage_width(level + 1),
                                    config.stage_width(level), 3,
                                    stride=2, padding=1))
            layers.extend(ResBlock(config.stage_width(level))
                          for _ in range(config.stage_blocks(level)))
        layers.append(nn.Conv2d(config.stage_width(0), config.latent_dim,
                                3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, image: Tensor) -> Tensor:
        squeeze = image.ndim == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) image, got {tuple(image.shape)}")
        f = self.config.downsample_factor
        _, _, height, width = image.shape
        if height % f or width % f:
            raise ShapeError(
                f"image {height}x{width} not divisible by downsample factor {f}")
        latent = self.net(image)
        return latent.squeeze(0) if squeeze else latent

    encode = forward


class Decoder(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        s = config.num_stages
        layers: list[nn.Module] = [
            nn.Conv2d(config.latent_dim, config.stage_width(0), 3, padding=1)]
        layers.extend(ResBlock(config.stage_width(0))
                      for _ in range(config.stage_blocks(0)))
        for level in range(1, s + 1):
            layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
            layers.append(nn.Conv2d(config.stage_width(level - 1),
                                    config.stage_width(level), 3, padding=1))
            layers.extend(ResBlock(config.stage_width(level))
                          for _ in range(config.stage_blocks(level)))
        layers.append(nn.Conv2d(config.stage_width(s), 3, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, latent: Tensor) -> Tensor:
        """Raw reconstruction, unclamped; use decode() for emission."""
        squeeze = latent.ndim == 3
        if squeeze:
            latent = latent.unsqueeze(0)
        if latent.ndim != 4 or latent.shape[1] != self.config.latent_dim:
            raise ShapeError(
                f"expected latent with {self.config.latent_dim} channels, "
                f"got {tuple(latent.shape)}")
        image = self.net(latent)
        return image.squeeze(0) if squeeze else image

    def decode(self, latent: Tensor) -> Tensor:
        return self.forward(latent).clamp(0.0, 1.0)


def build_autoencoder(config: AutoencoderConfig) -> tuple[Encoder, Decoder]:
    """Construct the encoder/decoder pair with seed-deterministic weights."""
    encoder = Encoder(config)
    decoder = Decoder(config)
    seeded_init(encoder, config.seed)
    seeded_init(decoder, config.seed + 1)
    return encoder, decoder
