"""Codec model bundle: autoencoder + codebook + denoiser + rate tables.

One checkpoint archive holds the config record, all parameter tensors, the
static PMF table, the optional rate model, and an 8-byte model hash (first
8 bytes of SHA-256 over the canonically serialized parameters) that the
bitstream header echoes so decoders can detect model mismatches.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .autoencoder import AutoencoderConfig, build_autoencoder
from .diffusion import SingleStepParams
from .entropy import PmfTable, build_pmf
from .errors import ConfigError, FormatError
from .ratemod import RateModel
from .unet import FusionDenoiser, UNetConfig
from .vq import Codebook

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    codebook_size: int = 256
    kappa: float = 1.0
    eta_small: float = 0.05
    eta_large: float = 0.9
    eta_p: float = 0.0
    beta_commit: float = 0.25
    lambda_perceptual: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.codebook_size < 2 or self.codebook_size > 0xFFFF:
            raise ConfigError("codebook size must be in [2, 65535]")
        if not 0 < self.eta_small < self.eta_large <= 1.0:
            raise ConfigError("need 0 < eta_small < eta_large <= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["autoencoder"] = AutoencoderConfig(**d["autoencoder"])
        d["unet"] = UNetConfig(**d["unet"])
        return cls(**d)


class CodecModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self._cached_hash: bytes | None = None
        self.encoder, self.decoder = build_autoencoder(config.autoencoder)
        self.codebook = Codebook(config.codebook_size,
                                 config.autoencoder.latent_dim,
                                 seed=config.seed + 17)
        self.denoiser = FusionDenoiser(config.autoencoder.latent_dim,
                                       config.unet)
        self.pmf: PmfTable | None = None
        self.rate_model: RateModel | None = None

    @property
    def downsample_factor(self) -> int:
        return self.config.autoencoder.downsample_factor

    def parameter_hash(self) -> bytes:
        """First 8 bytes of SHA-256 over name-sorted float32 parameters.

        Cached while the model is frozen; entering training mode or loading
        a state dict invalidates the cache.
        """
        if self._cached_hash is None:
            digest = hashlib.sha256()
            for name, param in sorted(self.named_parameters()):
                digest.update(name.encode())
                digest.update(param.detach().to(torch.float32).numpy().tobytes())
            self._cached_hash = digest.digest()[:8]
        return self._cached_hash

    def train(self, mode: bool = True) -> "CodecModel":
        if mode:
            self._cached_hash = None
        return super().train(mode)

    def load_state_dict(self, *args, **kwargs):
        self._cached_hash = None
        return super().load_state_dict(*args, **kwargs)

    def effective_pmf(self) -> PmfTable:
        """The stored PMF, or uniform when the model has not been fit yet."""
        if self.pmf is not None:
            return self.pmf
        return build_pmf(np.zeros(self.config.codebook_size, dtype=np.int64))

    def single_step_params(self, eta_q: float | None = None) -> SingleStepParams:
        return SingleStepParams(
            eta_q=self.config.eta_large if eta_q is None else eta_q,
            eta_p=self.config.eta_p,
            kappa=self.config.kappa,
        )

    def save(self, path, extra: dict | None = None) -> None:
        payload = {
            "checkpoint_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "model_state": self.state_dict(),
            "pmf": None if self.pmf is None else self.pmf.freq.copy(),
            "rate_model": (None if self.rate_model is None
                           else self.rate_model.to_dict()),
            "model_hash": self.parameter_hash(),
        }
        if extra:
            payload["extra"] = extra
        torch.save(payload, path)

    @classmethod
    def load(cls, path, expect_hash: bool = True) -> "CodecModel":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        version = payload.get("checkpoint_version")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        model = cls(ModelConfig.from_dict(payload["config"]))
        model.load_state_dict(payload["model_state"])
        if payload.get("pmf") is not None:
            model.pmf = PmfTable(freq=np.asarray(payload["pmf"], dtype=np.uint32))
        if payload.get("rate_model") is not None:
            model.rate_model = RateModel.from_dict(payload["rate_model"])
        if expect_hash and model.parameter_hash() != payload["model_hash"]:
            raise FormatError("checkpoint hash does not match its parameters")
        model.eval()
        return model

    @staticmethod
    def load_extra(path) -> dict:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        return payload.get("extra", {})
