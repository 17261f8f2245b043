"""Rate-adaptive noise modulation: eta calibration and the 1/B rule.

The inference-time forward noise scale is tied to the bitrate: denoising
strength rises as the rate falls.  A calibration sweep of full
compress/decompress cycles per eta feeds a one-parameter model
eta = clamp(c / bpp, eta_min, eta_max).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError

DEFAULT_ETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class RateModel:
    """eta = clamp(c / bpp, eta_min, eta_max)."""

    c: float
    eta_min: float
    eta_max: float

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ConfigError(f"proportionality constant must be > 0, got {self.c}")
        if not self.eta_min < self.eta_max <= 1.0:
            raise ConfigError(
                f"need eta_min < eta_max <= 1, got [{self.eta_min}, {self.eta_max}]")

    def to_dict(self) -> dict:
        return {"c": self.c, "eta_min": self.eta_min, "eta_max": self.eta_max}

    @classmethod
    def from_dict(cls, d: dict) -> "RateModel":
        return cls(c=float(d["c"]), eta_min=float(d["eta_min"]),
                   eta_max=float(d["eta_max"]))


def select_eta(bpp: float, model: RateModel) -> float:
    """Monotone non-increasing map from rate to noise scale."""
    if bpp <= 0:
        raise CalibrationError(f"bpp must be positive, got {bpp}")
    return min(max(model.c / bpp, model.eta_min), model.eta_max)


@dataclass
class CalibRow:
    codebook_size: int
    bpp: float
    grid: tuple[float, ...]
    scores: tuple[float, ...]
    eta_star: float


@dataclass
class CalibTable:
    rows: list[CalibRow] = field(default_factory=list)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["codebook_size", "bpp", "eta", "proxy", "is_star"])
            for row in self.rows:
                for eta, score in zip(row.grid, row.scores):
                    writer.writerow([row.codebook_size, f"{row.bpp:.8f}",
                                     f"{eta:.6f}", f"{score:.10f}",
                                     int(eta == row.eta_star)])

    @classmethod
    def load_csv(cls, path) -> "CalibTable":
        groups: dict[tuple, list] = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                key = (int(rec["codebook_size"]), float(rec["bpp"]))
                groups.setdefault(key, []).append(
                    (float(rec["eta"]), float(rec["proxy"]), int(rec["is_star"])))
        table = cls()
        for (k, bpp), entries in groups.items():
            grid = tuple(e[0] for e in entries)
            scores = tuple(e[1] for e in entries)
            star = next(e[0] for e in entries if e[2])
            table.rows.append(CalibRow(k, bpp, grid, scores, star))
        return table


def sweep_eta(evaluate, grid) -> tuple[tuple[float, ...], float]:
    """Run evaluate(eta) over the grid; argmin with lowest-eta tie-break."""
    grid = tuple(sorted(grid))
    if not grid:
        raise CalibrationError("eta grid is empty")
    if grid[0] <= 0 or grid[-1] > 1:
        raise CalibrationError("eta grid must lie in (0, 1]")
    scores = tuple(float(evaluate(eta)) for eta in grid)
    star = grid[int(np.argmin(scores))]  # argmin returns the first minimum
    return scores, star


def calibrate_eta(model, val_images, grid=DEFAULT_ETA_GRID,
                  seed: int = 0) -> CalibRow:
    """Full compress/decompress sweep over the eta grid on a frozen model.

    The per-eta score is the mean perceptual proxy across the validation
    images; the measured bpp is the mean estimated rate of the streams.
    """
    from . import codec  # deferred: codec depends on this module's RateModel
    from .metrics import perceptual_proxy

    images = list(val_images)
    if not images:
        raise CalibrationError("validation set is empty")
    bpps = []

    def evaluate(eta):
        total = 0.0
        for i, image in enumerate(images):
            blob, report = codec.compress(image, model, eta=eta)
            recon = codec.decompress(blob, model, seed=seed)
            total += perceptual_proxy(image, recon)
            if len(bpps) < len(images):
                bpps.append(report.estimated_bpp)
        return total / len(images)

    scores, star = sweep_eta(evaluate, grid)
    return CalibRow(
        codebook_size=model.config.codebook_size,
        bpp=float(np.mean(bpps)),
        grid=tuple(sorted(grid)),
        scores=scores,
        eta_star=star,
    )


def fit_rate_model(table: CalibTable) -> RateModel:
    """Least-squares fit of eta_star = c / bpp in log space."""
    rows = table.rows
    if len(rows) < 2 or len({row.bpp for row in rows}) < 2:
        raise CalibrationError("need at least 2 calibration rows with distinct bpp")
    log_c = float(np.mean([math.log(r.eta_star) + math.log(r.bpp) for r in rows]))
    eta_min = min(min(r.grid) for r in rows)
    eta_max = max(max(r.grid) for r in rows)
    return RateModel(c=math.exp(log_c), eta_min=eta_min, eta_max=eta_max)


def save_rate_model(model: RateModel, path) -> None:
    Path(path).write_text(
        f"c = {model.c!r}\neta_min = {model.eta_min!r}\n"
        f"eta_max = {model.eta_max!r}\n")


def load_rate_model(path) -> RateModel:
    values = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, _, val = line.partition("=")
            values[key.strip()] = float(val.strip())
    try:
        return RateModel(c=values["c"], eta_min=values["eta_min"],
                         eta_max=values["eta_max"])
    except KeyError as exc:
        raise CalibrationError(f"rate model file {path} is missing {exc}")
