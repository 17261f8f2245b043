"""End-to-end compress/decompress pipeline."""

from __future__ import annotations

import numpy as np
import torch

from . import entropy
from .diffusion import NoiseSchedule, modulate, multi_step_decode, single_step_decode
from .errors import FormatError, ModelHashError
from .images import from_tensor, to_tensor
from .model import CodecModel
from .native import ReferenceCoder
from .ratemod import select_eta
from .vq import quantize

_REFERENCE = ReferenceCoder()


def compress(image, model: CodecModel, eta: float | None = None,
             inline_pmf: bool = False,
             coder=None) -> tuple[bytes, entropy.RateReport]:
    """Encode one image into a .dfo buffer.

    eta overrides the noise scale written into the header; otherwise the
    calibrated rate model picks it from the estimated bpp, falling back to
    the config default when no calibration is attached.
    """
    x_img = image if isinstance(image, torch.Tensor) else to_tensor(image)
    height, width = x_img.shape[-2:]
    model.eval()
    with torch.no_grad():
        latent = model.encoder(x_img)
        q, _ = quantize(latent, model.codebook)
    q = q.numpy()
    h, w = q.shape

    pmf = model.effective_pmf()
    payload = (coder or _REFERENCE).encode_indices(q, pmf)
    estimated = entropy.estimate_bpp(q, pmf, height, width)

    if eta is None:
        if model.rate_model is not None:
            eta = select_eta(estimated, model.rate_model)
        else:
            eta = model.config.eta_large

    header = entropy.BitstreamHeader(
        num_symbols=pmf.num_symbols,
        latent_height=h,
        latent_width=w,
        eta_q=float(eta),
        model_hash=model.parameter_hash(),
        payload_len=len(payload),
    )
    blob = entropy.pack_bitstream(header, payload,
                                  inline_pmf=pmf if inline_pmf else None)
    report = entropy.rate_report(q, pmf, blob, height, width, len(payload))
    return blob, report


def transmitted_indices(blob: bytes, model: CodecModel,
                        force: bool = False, coder=None) -> np.ndarray:
    """Decode just the index grid from a bitstream (the lossless channel)."""
    header, payload, inline = entropy.unpack_bitstream(blob)
    if not force and header.model_hash != model.parameter_hash():
        raise ModelHashError(
            "bitstream was produced by a different model (pass force to override)")
    pmf = inline if inline is not None else model.effective_pmf()
    if pmf.num_symbols != header.num_symbols:
        raise FormatError(
            f"PMF has {pmf.num_symbols} symbols but header says "
            f"{header.num_symbols}")
    n = header.latent_height * header.latent_width
    return (coder or _REFERENCE).decode_indices(
        payload, n, pmf, shape=(header.latent_height, header.latent_width))


def decompress(blob: bytes, model: CodecModel, seed: int = 0, steps: int = 1,
               mode: str = "deterministic", force: bool = False,
               eta: float | None = None, coder=None) -> np.ndarray:
    """Decode a .dfo buffer back to an (H, W, 3) image in [0, 1].

    Deterministic given (blob, model, seed): the forward noise that seeds
    the denoiser comes from a generator seeded here.  steps > 1 runs the
    multi-step reverse chain on a geometric schedule topped at the header's
    eta_q.
    """
    header, _, _ = entropy.unpack_bitstream(blob)
    q = torch.from_numpy(
        transmitted_indices(blob, model, force=force, coder=coder))
    eta_q = float(header.eta_q) if eta is None else float(eta)

    model.eval()
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        y = model.codebook.entries[q].permute(2, 0, 1)
        if steps == 1:
            params = model.single_step_params(eta_q)
            x_tilde = modulate(y, params, rng)
            x_hat = single_step_decode(
                y, x_tilde, params,
                lambda xt, yy: model.denoiser(xt, yy, t=1),
                mode=mode, rng=rng)
        else:
            sched = NoiseSchedule.geometric(steps, eta_q,
                                            kappa=model.config.kappa)
            x_hat = multi_step_decode(
                y, sched, lambda xt, yy, t: model.denoiser(xt, yy, t),
                rng=rng, mode=mode)
        image = model.decoder.decode(x_hat)
    return from_tensor(image)


def vq_only_decode(blob: bytes, model: CodecModel,
                   force: bool = False) -> np.ndarray:
    """0-step baseline: decode the quantized latent without refinement."""
    q = torch.from_numpy(transmitted_indices(blob, model, force=force))
    model.eval()
    with torch.no_grad():
        y = model.codebook.entries[q].permute(2, 0, 1)
        image = model.decoder.decode(y)
    return from_tensor(image)
