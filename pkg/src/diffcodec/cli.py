"""Command-line surface: train, compress, decompress, calibrate, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import DiffcodecError


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=0,
                        help="rng seed (decode noise, splits, sampling)")


def _add_coder(parser):
    parser.add_argument("--coder", choices=("auto", "fast", "reference"),
                        default="auto",
                        help="entropy coder backend (default: auto-detect)")


def _parse_config_file(path) -> dict:
    """key = value lines; '#' comments; values parsed as int/float/str."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DiffcodecError(f"bad config line (expected key = value): {raw!r}")
        key, _, val = line.partition("=")
        val = val.strip()
        for cast in (int, float):
            try:
                val = cast(val)
                break
            except ValueError:
                continue
        values[key.strip()] = val
    return values


def cmd_train(args) -> int:
    from .autoencoder import AutoencoderConfig
    from .model import ModelConfig
    from .training import TrainConfig, fit
    from .unet import UNetConfig

    overrides = _parse_config_file(args.config) if args.config else {}
    for key in ("batch_size", "learning_rate", "iterations", "crop_size",
                "eta_small", "eta_large"):
        flag = getattr(args, key, None)
        if flag is not None:
            overrides[key] = flag
    train_keys = {f.name for f in TrainConfig.__dataclass_fields__.values()}
    train_kw = {k: v for k, v in overrides.items() if k in train_keys}
    train_kw.setdefault("seed", args.seed)
    config = TrainConfig(**train_kw)

    auto_kw = {k[len("autoencoder_"):]: v for k, v in overrides.items()
               if k.startswith("autoencoder_")}
    unet_kw = {k[len("unet_"):]: v for k, v in overrides.items()
               if k.startswith("unet_")}
    if args.downsample_factor:
        auto_kw["downsample_factor"] = args.downsample_factor
    if args.latent_dim:
        auto_kw["latent_dim"] = args.latent_dim
    auto_kw.setdefault("seed", args.seed)
    unet_kw.setdefault("seed", args.seed)
    model_keys = {f.name for f in ModelConfig.__dataclass_fields__.values()}
    model_kw = {k: v for k, v in overrides.items()
                if k in model_keys and k not in ("autoencoder", "unet", "seed")}
    if args.codebook_size:
        model_kw["codebook_size"] = args.codebook_size
    model_kw["eta_small"] = config.eta_small
    model_kw["eta_large"] = config.eta_large
    model_config = ModelConfig(
        autoencoder=AutoencoderConfig(**auto_kw),
        unet=UNetConfig(**unet_kw),
        seed=args.seed,
        **model_kw,
    )

    model = fit(args.dataset, config, model_config, args.out,
                log_path=args.log, resume_path=args.resume)
    print(f"checkpoint written to {args.out} "
          f"(hash {model.parameter_hash().hex()})")
    return 0


def cmd_compress(args) -> int:
    from . import codec
    from .images import load_image
    from .model import CodecModel
    from .native import get_coder
    from .ratemod import load_rate_model

    model = CodecModel.load(args.model)
    if args.rate_model:
        model.rate_model = load_rate_model(args.rate_model)
    image = load_image(args.input)
    blob, report = codec.compress(image, model, eta=args.eta,
                                  inline_pmf=args.inline_pmf,
                                  coder=get_coder(args.coder))
    Path(args.output).write_bytes(blob)
    print(f"estimated_bpp={report.estimated_bpp:.6f} "
          f"actual_bpp={report.actual_bpp:.6f} "
          f"payload_bytes={report.payload_bytes} "
          f"header_bytes={report.header_bytes}")
    return 0


def cmd_decompress(args) -> int:
    from . import codec
    from .images import save_image
    from .model import CodecModel
    from .native import get_coder

    model = CodecModel.load(args.model)
    blob = Path(args.input).read_bytes()
    image = codec.decompress(blob, model, seed=args.seed, steps=args.steps,
                             force=args.force, coder=get_coder(args.coder))
    save_image(image, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_calibrate(args) -> int:
    from .model import CodecModel
    from .ratemod import (CalibTable, calibrate_eta, fit_rate_model,
                          save_rate_model, DEFAULT_ETA_GRID)
    from .training import ImageFolder

    grid = (tuple(float(v) for v in args.grid.split(","))
            if args.grid else DEFAULT_ETA_GRID)
    folder = ImageFolder(args.images)
    images = [folder.load(p) for p in folder.files]
    images = [im for im in images if im is not None]

    table = CalibTable()
    for checkpoint in args.checkpoints:
        model = CodecModel.load(checkpoint)
        row = calibrate_eta(model, images, grid=grid, seed=args.seed)
        table.rows.append(row)
        print(f"{checkpoint}: K={row.codebook_size} bpp={row.bpp:.5f} "
              f"eta_star={row.eta_star}")

    out_prefix = Path(args.out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    table.save_csv(out_prefix.with_suffix(".csv"))
    if len(table.rows) >= 2 and len({r.bpp for r in table.rows}) >= 2:
        rate_model = fit_rate_model(table)
        save_rate_model(rate_model, out_prefix.with_suffix(".ratemodel"))
        print(f"rate model c={rate_model.c:.6g} "
              f"bounds=[{rate_model.eta_min}, {rate_model.eta_max}]")
    else:
        print("single rate point: calibration table written, "
              "no rate model fit (needs >= 2 distinct bpp rows)")
    return 0


def cmd_bench(args) -> int:
    from .bench import rd_sweep, time_codec, write_timing_csv
    from .native import get_coder

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    coder = get_coder(args.coder)
    steps = tuple(int(v) for v in args.steps.split(","))

    rd_sweep(args.checkpoints, args.images, out_csv=out_dir / "rd_sweep.csv",
             plot_dir=out_dir, seed=args.seed, coder=coder)
    timing = {}
    for checkpoint in args.checkpoints:
        reports = time_codec(checkpoint, args.images, steps=steps,
                             runs=args.runs, seed=args.seed, coder=coder)
        timing[Path(checkpoint).stem] = reports
        for r in reports:
            print(f"{checkpoint} steps={r.steps} "
                  f"encode_s={r.encode_s:.4f} decode_s={r.decode_s:.4f}")
    write_timing_csv(timing, out_dir / "timing.csv")
    print(f"benchmark artifacts in {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffcodec",
        description="VQ latent codec with a single-step denoising decoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on an image directory")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--log", help="CSV training log path")
    p.add_argument("--resume", help="resume-state path (written periodically)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--eta-small", dest="eta_small", type=float)
    p.add_argument("--eta-large", dest="eta_large", type=float)
    p.add_argument("--downsample-factor", type=int, choices=(8, 16))
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--codebook-size", type=int)
    _add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="image -> .dfo bitstream")
    p.add_argument("input")
    p.add_argument("model", help="checkpoint path")
    p.add_argument("output")
    p.add_argument("--eta", type=float, help="override the noise scale")
    p.add_argument("--rate-model", help="calibrated rate model file")
    p.add_argument("--inline-pmf", action="store_true",
                   help="embed the PMF table for model-free index decode")
    _add_coder(p)
    _add_seed(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help=".dfo bitstream -> image")
    p.add_argument("input")
    p.add_argument("model", help="checkpoint path")
    p.add_argument("output")
    p.add_argument("--steps", type=int, default=1,
                   help="denoise step count (1 = single-step)")
    p.add_argument("--force", action="store_true",
                   help="decode despite a model-hash mismatch")
    _add_coder(p)
    _add_seed(p)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("calibrate",
                       help="sweep eta per checkpoint and fit the rate model")
    p.add_argument("images", help="validation image directory")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--grid", help="comma-separated eta values")
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>.csv and <prefix>.ratemodel")
    _add_seed(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="RD sweep + timing harness")
    p.add_argument("images", help="evaluation image directory")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", default="1,15",
                   help="comma-separated step counts to time")
    p.add_argument("--runs", type=int, default=5)
    _add_coder(p)
    _add_seed(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DiffcodecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
