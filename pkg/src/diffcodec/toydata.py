"""Synthetic image corpus for desk-scale training and benchmarks.

Images mix smooth color gradients, band-limited noise textures, and hard
geometric shapes so both low-frequency structure and edges are present.
Fully deterministic per (seed, size).

Usage: python -m diffcodec.toydata OUT_DIR --count 64 --size 192 --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage

from .images import save_image


def _gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-9)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    return ramp[..., None] * c1 + (1 - ramp[..., None]) * c0


def _texture(rng, size):
    base = rng.normal(size=(size // 8 + 1, size // 8 + 1, 3))
    up = ndimage.zoom(base, (8, 8, 1), order=3)[:size, :size]
    up = ndimage.gaussian_filter(up, sigma=(1.5, 1.5, 0))
    return 0.5 + up * rng.uniform(0.05, 0.25)


def _shapes(rng, image):
    size = image.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0, 1, 3)
        kind = rng.integers(0, 3)
        if kind == 0:  # filled circle
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size * 0.05, size * 0.25)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        elif kind == 1:  # axis-aligned rectangle
            y0, x0 = rng.uniform(0, size * 0.8, 2)
            hgt, wid = rng.uniform(size * 0.1, size * 0.4, 2)
            mask = (yy >= y0) & (yy < y0 + hgt) & (xx >= x0) & (xx < x0 + wid)
        else:  # soft diagonal band
            angle = rng.uniform(0, np.pi)
            offset = rng.uniform(0, size)
            band = np.cos(angle) * xx + np.sin(angle) * yy - offset
            mask = np.abs(band) < rng.uniform(2, size * 0.06)
        alpha = rng.uniform(0.5, 1.0)
        image[mask] = (1 - alpha) * image[mask] + alpha * color
    return image


def make_image(seed: int, size: int = 192) -> np.ndarray:
    rng = np.random.default_rng(seed)
    image = 0.6 * _gradient(rng, size) + 0.4 * _texture(rng, size)
    image = _shapes(rng, image)
    image = ndimage.gaussian_filter(image, sigma=(0.5, 0.5, 0))
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def write_corpus(out_dir, count: int = 64, size: int = 192,
                 seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out / f"toy_{i:04d}.png"
        save_image(make_image(seed + i, size), path)
        paths.append(path)
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--count", type=int, default=64)
    parser.add_argument("--size", type=int, default=192)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_corpus(args.out_dir, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
