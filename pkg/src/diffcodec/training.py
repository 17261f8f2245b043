"""End-to-end training: composite loss, 2-step noise sampling, fit loop.

Each iteration draws one of two forward-noise scales uniformly: a large
scale matching inference and a tiny scale that keeps the denoiser
distortion-robust.  The loss couples pixel reconstruction, the perceptual
proxy, and the two stop-gradient codebook terms.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .entropy import build_pmf
from .errors import ConfigError, DiffcodecError
from .images import load_image, to_tensor
from .model import CodecModel, ModelConfig
from .perceptual import PerceptualProxy
from .vq import quantize, straight_through, vq_loss_terms

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass(frozen=True)
class LossWeights:
    lambda_perceptual: float = 1.0
    beta_commit: float = 0.25

    def __post_init__(self):
        if self.lambda_perceptual < 0 or self.beta_commit < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 5e-5
    iterations: int = 60_000
    crop_size: int = 256
    eta_small: float = 0.05
    eta_large: float = 0.9
    seed: int = 0
    val_fraction: float = 0.1
    checkpoint_every: int = 1_000
    weight_decay: float = 0.01

    def __post_init__(self):
        if not 0 < self.eta_small < self.eta_large <= 1.0:
            raise ConfigError("need 0 < eta_small < eta_large <= 1")
        if self.batch_size < 1 or self.iterations < 1 or self.crop_size < 16:
            raise ConfigError("batch size, iterations, crop size out of range")


def desk_scale_config(**overrides) -> TrainConfig:
    """Small-corpus defaults: minutes on a CPU instead of GPU-days."""
    base = dict(batch_size=4, learning_rate=1e-4, iterations=2_000,
                crop_size=64, checkpoint_every=500)
    base.update(overrides)
    return TrainConfig(**base)


_proxy_cache: dict[torch.dtype, PerceptualProxy] = {}


def _proxy_for(dtype: torch.dtype) -> PerceptualProxy:
    if dtype not in _proxy_cache:
        _proxy_cache[dtype] = PerceptualProxy(dtype=dtype)
    return _proxy_cache[dtype]


def total_loss(image, recon, latent, quantized, weights: LossWeights,
               proxy: PerceptualProxy | None = None):
    """Composite objective; returns (total, components dict)."""
    if proxy is None:
        proxy = _proxy_for(image.dtype)
    mse = F.mse_loss(recon, image)
    perceptual = proxy(image, recon)
    l_embed, l_commit = vq_loss_terms(latent, quantized, weights.beta_commit)
    total = mse + weights.lambda_perceptual * perceptual + l_embed + l_commit
    components = {
        "mse": mse,
        "perceptual": perceptual,
        "embed": l_embed,
        "commit": l_commit,
    }
    return total, components


def sample_training_step(iteration: int, config: TrainConfig,
                         rng: np.random.Generator) -> tuple[int, float]:
    """Uniformly pick the tiny-noise (t=1) or inference-noise (t=2) step."""
    t = int(rng.integers(1, 3))
    eta = config.eta_small if t == 1 else config.eta_large
    return t, eta


class ImageFolder:
    """Sorted scan of a directory of images with a decoded-array cache."""

    def __init__(self, root, min_size: int | None = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ConfigError(f"{root} is not a directory")
        self.files = sorted(
            p for p in self.root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not self.files:
            raise ConfigError(f"no images found under {root}")
        self.min_size = min_size
        self._cache: dict[Path, np.ndarray] = {}

    def split(self, seed: int, val_fraction: float):
        order = np.random.default_rng(seed).permutation(len(self.files))
        n_val = max(1, int(round(len(self.files) * val_fraction)))
        if n_val >= len(self.files):
            raise ConfigError("dataset too small to hold out a validation split")
        val = [self.files[i] for i in order[:n_val]]
        train = [self.files[i] for i in order[n_val:]]
        return train, val

    def load(self, path: Path) -> np.ndarray | None:
        if path not in self._cache:
            try:
                image = load_image(path)
            except Exception as exc:  # undecodable files are skipped, not fatal
                warnings.warn(f"skipping undecodable image {path}: {exc}")
                self._cache[path] = None
                return None
            if self.min_size and min(image.shape[:2]) < self.min_size:
                warnings.warn(
                    f"skipping {path}: smaller than crop size {self.min_size}")
                image = None
            self._cache[path] = image
        return self._cache[path]


def random_crop(image: np.ndarray, size: int, rng: np.random.Generator):
    h, w = image.shape[:2]
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return image[i:i + size, j:j + size]


def sample_batch(folder: ImageFolder, files, config: TrainConfig,
                 rng: np.random.Generator) -> torch.Tensor:
    crops = []
    while len(crops) < config.batch_size:
        path = files[int(rng.integers(0, len(files)))]
        image = folder.load(path)
        if image is None:
            continue
        crops.append(random_crop(image, config.crop_size, rng))
    return torch.stack([to_tensor(c) for c in crops])


class TrainState:
    """Single-writer training state; everything needed to resume bit-exactly."""

    def __init__(self, model: CodecModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=config.learning_rate,
            weight_decay=config.weight_decay)
        self.proxy = _proxy_for(torch.float32)
        self.iteration = 0
        self.np_rng = np.random.default_rng(config.seed)
        self.torch_rng = torch.Generator().manual_seed(config.seed)
        self.codebook_initialized = False

    def save(self, path) -> None:
        self.model.save(path, extra={
            "optimizer": self.optimizer.state_dict(),
            "iteration": self.iteration,
            "np_rng": self.np_rng.bit_generator.state,
            "torch_rng": self.torch_rng.get_state(),
            "codebook_initialized": self.codebook_initialized,
            "train_config": asdict(self.config),
        })

    @classmethod
    def load(cls, path) -> "TrainState":
        extra = CodecModel.load_extra(path)
        if "optimizer" not in extra:
            raise DiffcodecError(f"{path} holds no training state")
        model = CodecModel.load(path)
        state = cls(model, TrainConfig(**extra["train_config"]))
        state.optimizer.load_state_dict(extra["optimizer"])
        state.iteration = extra["iteration"]
        state.np_rng.bit_generator.state = extra["np_rng"]
        state.torch_rng.set_state(extra["torch_rng"])
        state.codebook_initialized = extra["codebook_initialized"]
        return state


def train_step(batch: torch.Tensor, state: TrainState) -> dict:
    """One gradient update over every trainable parameter group."""
    model = state.model
    cfg = model.config
    model.train()

    latent = model.encoder(batch)
    if not state.codebook_initialized:
        model.codebook.init_from_latents(latent.detach(), seed=cfg.seed + 23)
        state.codebook_initialized = True
    q, y = quantize(latent, model.codebook)
    y_st = straight_through(latent, y)

    t, eta = sample_training_step(state.iteration, state.config, state.np_rng)
    noise = torch.randn(latent.shape, generator=state.torch_rng,
                        dtype=latent.dtype)
    x_tilde = (1.0 - eta) * latent + eta * y_st \
        + cfg.kappa * math.sqrt(eta) * noise
    f_out = model.denoiser(x_tilde, y_st, t)
    recon = model.decoder(f_out)

    weights = LossWeights(lambda_perceptual=cfg.lambda_perceptual,
                          beta_commit=cfg.beta_commit)
    loss, parts = total_loss(batch, recon, latent, y, weights, state.proxy)
    if not torch.isfinite(loss):
        raise DiffcodecError(
            f"non-finite loss at iteration {state.iteration}: "
            + ", ".join(f"{k}={v.item():.4g}" for k, v in parts.items()))

    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.iteration += 1

    usage = np.bincount(q.reshape(-1).numpy(), minlength=cfg.codebook_size)
    batch_pmf = build_pmf(usage)
    hw = batch.shape[-2] * batch.shape[-1]
    bits = -np.sum(usage * np.log2(batch_pmf.freq.astype(np.float64) / 65536.0))
    return {
        "iteration": state.iteration,
        "t": t,
        "eta": eta,
        "loss": float(loss.detach()),
        "mse": float(parts["mse"].detach()),
        "perceptual": float(parts["perceptual"].detach()),
        "embed": float(parts["embed"].detach()),
        "commit": float(parts["commit"].detach()),
        "bpp_estimate": float(bits / (batch.shape[0] * hw)),
        "code_usage": usage,
    }


def index_histogram(model: CodecModel, folder: ImageFolder, files) -> np.ndarray:
    """Code-usage histogram over full images (center-cropped to divisible)."""
    f = model.downsample_factor
    hist = np.zeros(model.config.codebook_size, dtype=np.int64)
    model.eval()
    with torch.no_grad():
        for path in files:
            image = folder.load(path)
            if image is None:
                continue
            h, w = image.shape[:2]
            ch, cw = (h // f) * f, (w // f) * f
            if ch < f or cw < f:
                continue
            top, left = (h - ch) // 2, (w - cw) // 2
            crop = image[top:top + ch, left:left + cw]
            q, _ = quantize(model.encoder(to_tensor(crop)), model.codebook)
            hist += np.bincount(q.reshape(-1).numpy(),
                                minlength=model.config.codebook_size)
    return hist


_LOG_FIELDS = ["iteration", "t", "eta", "loss", "mse", "perceptual",
               "embed", "commit", "bpp_estimate"]


def fit(dataset_dir, config: TrainConfig, model_config: ModelConfig,
        out_path, log_path=None, resume_path=None) -> CodecModel:
    """Run the training loop and write the final checkpoint (with PMF)."""
    folder = ImageFolder(dataset_dir, min_size=config.crop_size)
    train_files, _ = folder.split(config.seed, config.val_fraction)

    if resume_path and Path(resume_path).exists():
        state = TrainState.load(resume_path)
    else:
        state = TrainState(CodecModel(model_config), config)

    log_file = open(log_path, "w", newline="") if log_path else None
    writer = None
    if log_file:
        writer = csv.DictWriter(log_file, fieldnames=_LOG_FIELDS,
                                extrasaction="ignore")
        writer.writeheader()
    try:
        while state.iteration < config.iterations:
            batch = sample_batch(folder, train_files, config, state.np_rng)
            metrics = train_step(batch, state)
            if writer:
                writer.writerow(metrics)
                log_file.flush()
            if resume_path and state.iteration % config.checkpoint_every == 0:
                state.save(resume_path)
    finally:
        if log_file:
            log_file.close()

    state.model.pmf = build_pmf(index_histogram(state.model, folder, train_files))
    state.model.save(out_path)
    state.model.eval()
    return state.model


def validation_files(dataset_dir, config: TrainConfig):
    folder = ImageFolder(dataset_dir, min_size=config.crop_size)
    _, val = folder.split(config.seed, config.val_fraction)
    return folder, val
