"""Learned codebook and nearest-neighbor latent quantization."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import ConfigError, ShapeError


class Codebook(nn.Module):
    """K learned d-dimensional entries, trained by gradient on the embed loss."""

    def __init__(self, num_entries: int, dim: int, seed: int = 0):
        super().__init__()
        if num_entries < 2:
            raise ConfigError("codebook needs at least 2 entries")
        if dim < 1:
            raise ConfigError("codebook entry dimension must be >= 1")
        gen = torch.Generator().manual_seed(seed)
        self.entries = nn.Parameter(torch.randn(num_entries, dim, generator=gen))

    @property
    def num_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @torch.no_grad()
    def init_from_latents(self, latents: Tensor, seed: int = 0) -> None:
        """Re-seed entries uniformly within the per-channel empirical range.

        Called once on the first training batch so initial entries cover the
        encoder's actual output range instead of a unit Gaussian.
        """
        flat = _flatten_vectors(latents, self.dim)
        lo = flat.min(dim=0).values
        hi = flat.max(dim=0).values
        gen = torch.Generator().manual_seed(seed)
        u = torch.rand(self.num_entries, self.dim, generator=gen,
                       dtype=self.entries.dtype)
        self.entries.copy_(lo + u * (hi - lo))


def _flatten_vectors(x: Tensor, dim: int) -> Tensor:
    """(d,h,w) or (B,d,h,w) -> (N, d) with cells in raster order."""
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4:
        raise ShapeError(f"expected (d,h,w) or (B,d,h,w), got {tuple(x.shape)}")
    if x.shape[1] != dim:
        raise ShapeError(
            f"latent has {x.shape[1]} channels but codebook entries have {dim}")
    return x.permute(0, 2, 3, 1).reshape(-1, dim)


def quantize(x: Tensor, codebook: Codebook) -> tuple[Tensor, Tensor]:
    """Map every latent vector to its nearest codebook entry.

    Returns (q, y): integer indices with the spatial shape of x, and the
    quantized latent y = entries[q] with the shape of x.  Distances are
    squared Euclidean; ties resolve to the lowest index.  y carries gradient
    to the codebook entries (it is a gather), not to x.
    """
    squeeze = x.ndim == 3
    entries = codebook.entries
    flat = _flatten_vectors(x, codebook.dim)
    n, k = flat.shape[0], codebook.num_entries
    q = torch.empty(n, dtype=torch.long)
    # Exact difference-based distances, chunked to bound the (chunk, K, d)
    # intermediate; argmin takes the first minimum, giving the tie rule.
    chunk = max(1, min(n, (1 << 22) // max(1, k * codebook.dim)))
    with torch.no_grad():
        for start in range(0, n, chunk):
            diff = flat[start:start + chunk, None, :] - entries[None, :, :]
            q[start:start + chunk] = diff.square().sum(-1).argmin(dim=1)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    b, _, h, w = x.shape
    q = q.reshape(b, h, w)
    y = entries[q].permute(0, 3, 1, 2)
    if squeeze:
        return q.squeeze(0), y.squeeze(0)
    return q, y


def straight_through(x: Tensor, y: Tensor) -> Tensor:
    """Forward value y; gradient passes to x unchanged and never reaches y."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    # x - sg(x) is exactly zero in the forward pass, so the output is
    # bit-identical to y while the gradient w.r.t. x stays the identity.
    return y.detach() + (x - x.detach())


def vq_loss_terms(x: Tensor, y: Tensor, beta: float) -> tuple[Tensor, Tensor]:
    """Stop-gradient codebook losses.

    l_embed = mean((sg(x) - y)^2) pulls entries toward encoder outputs;
    l_commit = beta * mean((sg(y) - x)^2) pulls the encoder toward its entry.
    """
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if beta < 0:
        raise ConfigError("commitment weight must be non-negative")
    l_embed = (x.detach() - y).square().mean()
    l_commit = beta * (y.detach() - x).square().mean()
    return l_embed, l_commit
