"""Rate-distortion sweeps and codec timing."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec, metrics
from .errors import ConfigError
from .images import load_image
from .metrics import RdCurve, RdPoint
from .model import CodecModel
from .training import IMAGE_SUFFIXES

SWEEP_FIELDS = ["rate_point", "bpp_estimated", "bpp_actual",
                "psnr", "ms_ssim", "proxy"]


@dataclass
class TimingReport:
    encode_s: float
    decode_s: float
    steps: int


def _image_paths(image_dir):
    paths = sorted(p for p in Path(image_dir).iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ConfigError(f"no images found under {image_dir}")
    return paths


def _center_crop_divisible(image, factor):
    h, w = image.shape[:2]
    ch, cw = (h // factor) * factor, (w // factor) * factor
    if ch < factor or cw < factor:
        return None
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[top:top + ch, left:left + cw]


def _load_model(checkpoint) -> tuple[str, CodecModel]:
    if isinstance(checkpoint, CodecModel):
        return f"K{checkpoint.config.codebook_size}", checkpoint
    model = CodecModel.load(checkpoint)
    return Path(checkpoint).stem, model


def rd_sweep(checkpoints, image_dir, out_csv=None, plot_dir=None,
             seed: int = 0, steps: int = 1, coder=None) -> dict[str, RdCurve]:
    """One RD point per checkpoint, averaged over the image directory.

    Returns a curve per metric (points sorted by bpp); optionally writes
    the CSV and one plot per metric.
    """
    if not checkpoints:
        raise ConfigError("need at least one checkpoint")
    paths = _image_paths(image_dir)
    rows = []
    for checkpoint in checkpoints:
        name, model = _load_model(checkpoint)
        sums = {k: 0.0 for k in ("bpp_estimated", "bpp_actual", "psnr",
                                 "ms_ssim", "proxy")}
        count = 0
        for path in paths:
            image = _center_crop_divisible(load_image(path),
                                           model.downsample_factor)
            if image is None:
                continue
            blob, report = codec.compress(image, model, coder=coder)
            recon = codec.decompress(blob, model, seed=seed, steps=steps,
                                     coder=coder)
            sums["bpp_estimated"] += report.estimated_bpp
            sums["bpp_actual"] += report.actual_bpp
            sums["psnr"] += metrics.psnr(image, recon)
            if min(image.shape[:2]) >= metrics.MS_SSIM_MIN_SIDE:
                sums["ms_ssim"] += metrics.ms_ssim(image, recon)
            else:
                sums["ms_ssim"] += float("nan")
            sums["proxy"] += metrics.perceptual_proxy(image, recon)
            count += 1
        if count == 0:
            raise ConfigError(
                f"no image in {image_dir} fits factor {model.downsample_factor}")
        rows.append({"rate_point": name,
                     **{k: v / count for k, v in sums.items()}})

    rows.sort(key=lambda r: r["bpp_actual"])
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
            writer.writeheader()
            writer.writerows(rows)

    curves: dict[str, RdCurve] = {}
    for metric in ("psnr", "ms_ssim", "proxy"):
        curve = RdCurve([RdPoint(r["bpp_actual"], {metric: r[metric]})
                         for r in rows if np.isfinite(r[metric])])
        curves[metric] = curve
        if plot_dir and curve.points:
            _plot_curve(curve, metric, Path(plot_dir) / f"rd_{metric}.png")
    return curves


def _plot_curve(curve: RdCurve, metric: str, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = curve.series(metric)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([r for r, _ in series], [m for _, m in series], "o-")
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel(metric)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def time_codec(checkpoint, image_dir, steps=(1, 15), runs: int = 5,
               seed: int = 0, coder=None) -> list[TimingReport]:
    """Median wall-clock codec latency per denoise step count.

    Times the codec path only (arrays in, arrays out; no image file I/O),
    strictly serially: torch is pinned to one thread for the measurement
    (thread-pool scheduling jitter otherwise dominates medians on small
    machines), with 1 warm-up run before the median of `runs` runs on the
    first usable image.
    """
    import torch

    if runs < 1:
        raise ConfigError("need at least one timing run")
    _, model = _load_model(checkpoint)
    image = None
    for path in _image_paths(image_dir):
        image = _center_crop_divisible(load_image(path),
                                       model.downsample_factor)
        if image is not None:
            break
    if image is None:
        raise ConfigError("no image large enough for timing")

    saved_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        blob, _ = codec.compress(image, model, coder=coder)
        reports = []
        for step_count in steps:
            codec.compress(image, model, coder=coder)  # warm-up
            encode_times = []
            for _ in range(runs):
                start = time.perf_counter()
                codec.compress(image, model, coder=coder)
                encode_times.append(time.perf_counter() - start)
            codec.decompress(blob, model, seed=seed, steps=step_count,
                             coder=coder)  # warm-up
            decode_times = []
            for _ in range(runs):
                start = time.perf_counter()
                codec.decompress(blob, model, seed=seed, steps=step_count,
                                 coder=coder)
                decode_times.append(time.perf_counter() - start)
            reports.append(TimingReport(
                encode_s=statistics.median(encode_times),
                decode_s=statistics.median(decode_times),
                steps=step_count,
            ))
        return reports
    finally:
        torch.set_num_threads(saved_threads)


def write_timing_csv(rows: dict[str, list[TimingReport]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint", "steps", "encode_s", "decode_s"])
        for name, reports in rows.items():
            for report in reports:
                writer.writerow([name, report.steps,
                                 f"{report.encode_s:.6f}",
                                 f"{report.decode_s:.6f}"])
