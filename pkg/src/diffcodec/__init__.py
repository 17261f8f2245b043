"""VQ latent image codec with a single-step denoising decoder."""

from .codec import compress, decompress, vq_only_decode
from .model import CodecModel, ModelConfig

__version__ = "0.1.0"

__all__ = ["CodecModel", "ModelConfig", "compress", "decompress",
           "vq_only_decode", "__version__"]
