"""Residual-shifting forward/reverse processes.

The forward process moves the clean latent x toward the quantized latent y
by a fraction eta_t while injecting Gaussian noise scaled by kappa*sqrt(eta_t).
The full T-step chain backs the multi-step ablation; inference uses the
single-step simplification with one forward noise scale eta_q and one
reverse scale eta_p (0 by default, so decode is noise-seeded but has no
extra output jitter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .errors import ConfigError, ScheduleError


@dataclass(frozen=True)
class NoiseSchedule:
    """Shift factors eta_0..eta_T (eta_0 = 0) and the noise magnitude kappa."""

    eta: np.ndarray
    kappa: float = 1.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        object.__setattr__(self, "eta", eta)
        if eta.ndim != 1 or len(eta) < 2:
            raise ScheduleError("schedule needs eta_0..eta_T with T >= 1")
        if eta[0] != 0.0:
            raise ScheduleError("eta_0 must be exactly 0")
        if not np.all(np.diff(eta) > 0):
            raise ScheduleError("eta must be strictly increasing")
        if self.kappa < 0:
            raise ScheduleError("kappa must be non-negative")

    @property
    def num_steps(self) -> int:
        return len(self.eta) - 1

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.eta[t] - self.eta[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ScheduleError(f"step {t} outside 1..{self.num_steps}")

    @classmethod
    def geometric(cls, num_steps: int, eta_final: float,
                  eta_first: float = 0.001, kappa: float = 1.0) -> "NoiseSchedule":
        """eta_1..eta_T geometrically spaced from eta_first to eta_final."""
        if num_steps < 1:
            raise ScheduleError("num_steps must be >= 1")
        if num_steps == 1:
            body = np.array([eta_final])
        else:
            body = np.geomspace(eta_first, eta_final, num_steps)
        return cls(eta=np.concatenate(([0.0], body)), kappa=kappa)

    @classmethod
    def two_step(cls, eta_small: float, eta_large: float,
                 kappa: float = 1.0) -> "NoiseSchedule":
        """The training schedule: eta_1 = eta_small, eta_2 = eta_large."""
        return cls(eta=np.array([0.0, eta_small, eta_large]), kappa=kappa)


@dataclass(frozen=True)
class SingleStepParams:
    """Noise scales for one-shot inference (forward eta_q, reverse eta_p)."""

    eta_q: float
    eta_p: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.eta_q <= 1.0 and math.isfinite(self.eta_q)):
            raise ConfigError(f"eta_q must be in (0, 1], got {self.eta_q}")
        if self.eta_p < 0 or not math.isfinite(self.eta_p):
            raise ConfigError(f"eta_p must be >= 0, got {self.eta_p}")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")


def _randn_like(x: Tensor, rng: torch.Generator | None) -> Tensor:
    return torch.randn(x.shape, generator=rng, dtype=x.dtype, device=x.device)


def forward_marginal(x: Tensor, y: Tensor, t: int, sched: NoiseSchedule,
                     rng: torch.Generator | None = None) -> Tensor:
    """Sample the step-t marginal: (1-eta_t) x + eta_t y + kappa sqrt(eta_t) eps."""
    if x.shape != y.shape:
        raise ScheduleError(
            f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    sched._check_t(t)
    eta = float(sched.eta[t])
    # (1-eta) x + eta y rather than x + eta (y-x): exact at both endpoints.
    mixed = (1.0 - eta) * x + eta * y
    if sched.kappa == 0.0:
        return mixed
    return mixed + sched.kappa * math.sqrt(eta) * _randn_like(x, rng)


def reverse_step(x_t: Tensor, y: Tensor, t: int, f_out: Tensor,
                 sched: NoiseSchedule, mode: str = "deterministic",
                 rng: torch.Generator | None = None) -> Tensor:
    """One reverse transition given the denoiser's clean-latent estimate."""
    if mode not in ("deterministic", "stochastic"):
        raise ConfigError(f"unknown mode {mode!r}")
    sched._check_t(t)
    eta_t = float(sched.eta[t])
    eta_prev = float(sched.eta[t - 1])
    if eta_t == 0.0:
        raise ScheduleError("eta_t must be positive in a reverse step")
    alpha = eta_t - eta_prev
    mean = (eta_prev / eta_t) * x_t + (alpha / eta_t) * f_out
    if mode == "deterministic":
        return mean
    var = sched.kappa ** 2 * (eta_prev / eta_t) * alpha
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * _randn_like(x_t, rng)


def modulate(y: Tensor, params: SingleStepParams,
             rng: torch.Generator | None = None,
             sample_noise: bool = True) -> Tensor:
    """Decode-side construction of the noised latent from y alone.

    The decoder never sees x, so the forward marginal collapses to
    y + kappa sqrt(eta_q) eps; sample_noise=False returns the mean y.
    """
    if not sample_noise or params.kappa == 0.0:
        return y
    return y + params.kappa * math.sqrt(params.eta_q) * _randn_like(y, rng)


def single_step_decode(y: Tensor, x_tilde: Tensor, params: SingleStepParams,
                       denoiser, mode: str = "deterministic",
                       rng: torch.Generator | None = None) -> Tensor:
    """One-shot reverse pass: x_hat = f(x_tilde, y) (+ reverse noise if asked)."""
    if mode not in ("deterministic", "stochastic"):
        raise ConfigError(f"unknown mode {mode!r}")
    x_hat = denoiser(x_tilde, y)
    if mode == "stochastic" and params.eta_p > 0 and params.kappa > 0:
        x_hat = x_hat + params.kappa * math.sqrt(params.eta_p) * _randn_like(x_hat, rng)
    return x_hat


def multi_step_decode(y: Tensor, sched: NoiseSchedule, denoiser,
                      rng: torch.Generator | None = None,
                      mode: str = "deterministic") -> Tensor:
    """Full reverse chain from the decoder-side top-of-schedule sample.

    denoiser(x_t, y, t) must return the clean-latent estimate at step t.
    """
    t_top = sched.num_steps
    x_t = y
    if sched.kappa > 0:
        x_t = y + sched.kappa * math.sqrt(float(sched.eta[t_top])) * _randn_like(y, rng)
    for t in range(t_top, 0, -1):
        f_out = denoiser(x_t, y, t)
        x_t = reverse_step(x_t, y, t, f_out, sched, mode=mode, rng=rng)
    return x_t
