"""Image <-> latent codecs.

All codecs map an RGB crop (H, W, 3) with values in [0, 1] to a 4-channel
latent plane at 1/8 spatial resolution and back. Encoding is deterministic
(pretrained adapters use the posterior mean) so pipeline runs are
reproducible.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from .errors import ModelLoadError
from .schedule import LatentFrame

LATENT_CHANNELS = 4
SCALE_FACTOR = 8


class VAEHandle(ABC):
    """Encoder/decoder pair between image crops and 4-channel latents."""

    scale_factor: int = SCALE_FACTOR
    latent_channels: int = LATENT_CHANNELS
    descriptor: str = ""

    @abstractmethod
    def encode(self, img: np.ndarray) -> LatentFrame: ...

    @abstractmethod
    def decode(self, latent: LatentFrame) -> np.ndarray: ...

    def _check_image(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
        if img.shape[0] % self.scale_factor or img.shape[1] % self.scale_factor:
            raise ValueError(
                f"image dims {img.shape[:2]} must be divisible by {self.scale_factor}")
        return img


class BlockCodec(VAEHandle):
    """Linear block-mean codec used by the toy stack.

    Encode averages each 8x8 block per color channel into latent channels
    0..2 (channel 3 is zero); decode broadcasts the means back. The round
    trip is exact on images that are constant within each 8x8 block, which
    all toy fixtures are; a black image maps to the zero latent.
    """

    descriptor = "toy:block"

    def encode(self, img: np.ndarray) -> LatentFrame:
        img = self._check_image(img)
        h, w = img.shape[0] // 8, img.shape[1] // 8
        means = img.reshape(h, 8, w, 8, 3).mean(axis=(1, 3))
        latent = np.zeros((h, w, 4), dtype=np.float64)
        latent[:, :, :3] = means
        return LatentFrame(latent, timestep=0)

    def decode(self, latent: LatentFrame) -> np.ndarray:
        data = latent.data
        if data.ndim != 3 or data.shape[2] != self.latent_channels:
            raise ValueError(f"expected (h, w, 4) latent, got {data.shape}")
        return np.repeat(np.repeat(data[:, :, :3], 8, axis=0), 8, axis=1)


def load_vae(descriptor: str) -> VAEHandle:
    """Materialize a codec from its descriptor.

    ``toy:block`` gives the exact toy codec; anything else is treated as a
    path to pretrained autoencoder weights (requires the optional diffusers
    runtime, not needed for the toy stack).
    """
    if descriptor == "toy:block":
        return BlockCodec()
    path = Path(descriptor)
    if not path.exists():
        raise ModelLoadError(f"autoencoder weights not found: {descriptor}")
    try:
        import diffusers  # noqa: F401
    except ImportError as exc:
        raise ModelLoadError(
            "loading pretrained autoencoder weights requires the optional "
            "'diffusers' runtime") from exc
    raise ModelLoadError(
        f"no adapter registered for autoencoder weights at {descriptor}")
