"""Halo removal around the composited crop.

High-resolution runs confine diffusion to a crop, and autoencoder
reconstruction differences leave a faint flickering square at its boundary.
This stage segments the inserted object, dilates its mask into a trimap, and
re-inpaints only the unknown band so that background pixels come straight
from the source frame and foreground pixels straight from the edit.
Low-resolution full-frame runs skip the stage entirely.

Segmentation and band inpainting are external services. Wire format (JSON
over HTTP, images as base64 PNG):

    POST /segment  {"image": <png-b64>, "label": <text>}
                -> {"mask": <png-b64, 8-bit gray, >=128 is object>}
    POST /inpaint  {"image": <png-b64>, "mask": <png-b64, band to fill>}
                -> {"image": <png-b64>}

Local stubs implement the same interfaces in-process for tests and offline
runs; a reference service app lives in ``invi.service.stubs``.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import httpx
import numpy as np
from scipy import ndimage

from .errors import BandInpainterError, ClientProtocolError, SegmenterError
from .io import decode_mask_png_b64, decode_png_b64, encode_mask_png_b64, encode_png_b64

logger = logging.getLogger(__name__)

LABEL_BG = 0
LABEL_FG = 1
LABEL_UNKNOWN = 2


def default_label(prompt: str) -> str:
    """Class noun used for detection: the last alphabetic word of the prompt."""
    words = [w.strip(".,!?;:'\"") for w in prompt.split()]
    words = [w for w in words if w.isalpha()]
    return words[-1].lower() if words else ""


class SegmenterClient(ABC):
    """Produces a soft object mask for a text label."""

    @abstractmethod
    def segment(self, image: np.ndarray, label: str) -> np.ndarray: ...


class BandInpainterClient(ABC):
    """Fills masked pixels conditioned on their surroundings."""

    @abstractmethod
    def inpaint(self, image: np.ndarray, band: np.ndarray) -> np.ndarray: ...


class ThresholdStubSegmenter(SegmenterClient):
    """Local stand-in: luminance threshold, ignoring the label."""

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def segment(self, image: np.ndarray, label: str) -> np.ndarray:
        lum = image.mean(axis=2)
        return (lum >= self.threshold).astype(np.float64)


class FixedMaskSegmenter(SegmenterClient):
    """Test stand-in returning a preset soft mask."""

    def __init__(self, mask: np.ndarray):
        self.mask = np.asarray(mask, dtype=np.float64)

    def segment(self, image: np.ndarray, label: str) -> np.ndarray:
        if self.mask.shape != image.shape[:2]:
            raise ValueError("preset mask does not match image size")
        return self.mask


class IdentityStubBandInpainter(BandInpainterClient):
    """Local stand-in: leaves the image as supplied."""

    def inpaint(self, image: np.ndarray, band: np.ndarray) -> np.ndarray:
        return np.array(image, copy=True)


def _post_with_retries(client: httpx.Client, url: str, payload: dict,
                       retries: int, what: str) -> dict:
    last_exc: Exception | None = None
    for _ in range(retries + 1):
        try:
            resp = client.post(url, json=payload)
            resp.raise_for_status()
            return resp.json()
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            last_exc = exc
    raise RuntimeError(f"{what} request failed after {retries + 1} attempts: {last_exc}")


class HTTPSegmenterClient(SegmenterClient):
    def __init__(self, endpoint: str, timeout: float = 10.0, retries: int = 2,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)

    def segment(self, image: np.ndarray, label: str) -> np.ndarray:
        payload = {"image": encode_png_b64(image), "label": label}
        try:
            body = _post_with_retries(self._client, self.endpoint + "/segment",
                                      payload, self.retries, "segmentation")
        except RuntimeError as exc:
            raise SegmenterError(str(exc)) from exc
        if not isinstance(body, dict) or "mask" not in body:
            raise ClientProtocolError("segmenter response missing 'mask'")
        try:
            mask = decode_mask_png_b64(body["mask"])
        except Exception as exc:
            raise ClientProtocolError(f"segmenter mask not decodable: {exc}") from exc
        if mask.shape != image.shape[:2]:
            raise ClientProtocolError(
                f"segmenter mask shape {mask.shape} does not match image "
                f"{image.shape[:2]}")
        return mask


class HTTPBandInpainterClient(BandInpainterClient):
    def __init__(self, endpoint: str, timeout: float = 10.0, retries: int = 2,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)

    def inpaint(self, image: np.ndarray, band: np.ndarray) -> np.ndarray:
        payload = {"image": encode_png_b64(image),
                   "mask": encode_mask_png_b64(band.astype(np.float64))}
        try:
            body = _post_with_retries(self._client, self.endpoint + "/inpaint",
                                      payload, self.retries, "band inpainting")
        except RuntimeError as exc:
            raise BandInpainterError(str(exc)) from exc
        if not isinstance(body, dict) or "image" not in body:
            raise ClientProtocolError("inpainter response missing 'image'")
        try:
            filled = decode_png_b64(body["image"])
        except Exception as exc:
            raise ClientProtocolError(f"inpainter image not decodable: {exc}") from exc
        if filled.shape != image.shape:
            raise ClientProtocolError(
                f"inpainter image shape {filled.shape} does not match input "
                f"{image.shape}")
        return filled


def make_segmenter(descriptor: str, timeout: float = 10.0,
                   retries: int = 2) -> SegmenterClient:
    if descriptor == "stub:threshold":
        return ThresholdStubSegmenter()
    if descriptor.startswith(("http://", "https://")):
        return HTTPSegmenterClient(descriptor, timeout=timeout, retries=retries)
    raise ValueError(f"unknown segmenter descriptor {descriptor!r}")


def make_band_inpainter(descriptor: str, timeout: float = 10.0,
                        retries: int = 2) -> BandInpainterClient:
    if descriptor == "stub:source":
        return IdentityStubBandInpainter()
    if descriptor.startswith(("http://", "https://")):
        return HTTPBandInpainterClient(descriptor, timeout=timeout, retries=retries)
    raise ValueError(f"unknown band-inpainter descriptor {descriptor!r}")


def extract_object_mask(crop: np.ndarray, label: str, client: SegmenterClient,
                        threshold: float = 0.5) -> np.ndarray:
    """Binary object mask from the segmentation client.

    An all-false mask is a valid no-detection outcome; callers skip blending
    for that frame.
    """
    if not label:
        raise ValueError("detection label must be non-empty")
    soft = np.asarray(client.segment(crop, label), dtype=np.float64)
    if soft.shape != crop.shape[:2]:
        raise ClientProtocolError(
            f"segmenter returned shape {soft.shape} for image {crop.shape[:2]}")
    return soft >= threshold


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a Euclidean disk of the given radius."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= radius


@dataclass
class Trimap:
    """Pixelwise foreground / background / unknown-band partition."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError("trimap labels must be 2-D")
        if not np.isin(self.labels, (LABEL_BG, LABEL_FG, LABEL_UNKNOWN)).all():
            raise ValueError("trimap labels must be bg/fg/unknown")

    @property
    def fg(self) -> np.ndarray:
        return self.labels == LABEL_FG

    @property
    def bg(self) -> np.ndarray:
        return self.labels == LABEL_BG

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == LABEL_UNKNOWN


def make_trimap(object_mask: np.ndarray, dilated_mask: np.ndarray) -> Trimap:
    """Partition the crop: object is foreground, the dilation ring is the
    unknown band, everything else is background."""
    object_mask = np.asarray(object_mask, dtype=bool)
    dilated_mask = np.asarray(dilated_mask, dtype=bool)
    if object_mask.shape != dilated_mask.shape:
        raise ValueError("mask shapes differ")
    if (object_mask & ~dilated_mask).any():
        raise ValueError("dilated mask must contain the object mask")
    labels = np.full(object_mask.shape, LABEL_BG, dtype=np.uint8)
    labels[dilated_mask] = LABEL_UNKNOWN
    labels[object_mask] = LABEL_FG
    return Trimap(labels)


def _crossfade_band(crop: np.ndarray, source: np.ndarray,
                    trimap: Trimap) -> np.ndarray:
    """Fallback when the band inpainter is unreachable: linear cross-fade
    weighted by distance to the foreground versus the background region."""
    d_fg = ndimage.distance_transform_edt(~trimap.fg)
    d_bg = ndimage.distance_transform_edt(~trimap.bg)
    band = trimap.unknown
    w_source = np.zeros(band.shape, dtype=np.float64)
    denom = d_fg + d_bg
    w_source[band] = d_fg[band] / denom[band]
    out = np.where(trimap.fg[:, :, None], crop, source)
    faded = w_source[:, :, None] * source + (1.0 - w_source[:, :, None]) * crop
    out[band] = faded[band]
    return out


def blend_halo(crop: np.ndarray, source_crop: np.ndarray, trimap: Trimap,
               client: BandInpainterClient) -> np.ndarray:
    """Assemble the final crop from the trimap regions.

    Foreground comes from the inpainted crop, background from the source
    crop, and the unknown band is filled by the band inpainter conditioned
    on the assembled surroundings. If the client fails, a distance-weighted
    cross-fade fills the band instead and a warning is logged.
    """
    if crop.shape != source_crop.shape:
        raise ValueError(f"crop shapes differ: {crop.shape} vs {source_crop.shape}")
    if trimap.labels.shape != crop.shape[:2]:
        raise ValueError("trimap does not match crop size")
    base = np.where(trimap.fg[:, :, None], crop, source_crop)
    band = trimap.unknown
    if not band.any():
        return base
    try:
        filled = client.inpaint(base, band.astype(np.float64))
    except (BandInpainterError, ClientProtocolError) as exc:
        logger.warning("band inpainter failed (%s); falling back to cross-fade", exc)
        return _crossfade_band(crop, source_crop, trimap)
    return np.where(band[:, :, None], filled, base)


def postprocess_frame(inpainted_crop: np.ndarray, source_crop: np.ndarray,
                      label: str, segmenter: SegmenterClient,
                      band_inpainter: BandInpainterClient,
                      dilation_radius: int) -> tuple[np.ndarray, bool]:
    """Full halo-removal pass for one crop.

    Returns the blended crop and whether blending actually ran; frames with
    no detection are passed through unchanged.
    """
    object_mask = extract_object_mask(inpainted_crop, label, segmenter)
    if not object_mask.any():
        logger.warning("no %r detected; skipping halo blending for this frame", label)
        return np.array(inpainted_crop, copy=True), False
    dilated = dilate_mask(object_mask, dilation_radius)
    trimap = make_trimap(object_mask, dilated)
    return blend_halo(inpainted_crop, source_crop, trimap, band_inpainter), True
