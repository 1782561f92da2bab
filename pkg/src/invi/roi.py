"""Region-of-interest geometry and compositing.

Per-frame bounding boxes are expanded to fixed-resolution crops in which all
diffusion work happens; masks and masked-background crops are derived here,
and finished crops are pasted back so that every pixel outside the crop
rectangle stays bit-identical to the source frame.

Box-track file format: plain text, one record per frame,
``frame_index x y w h`` with 1-based contiguous frame indices and integer
source-pixel units. Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .schedule import LatentFrame
from .vae import VAEHandle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in pixel units, (x, y) top-left corner."""

    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def contains(self, other: "Rect") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x2 <= self.x2 and other.y2 <= self.y2)


@dataclass
class BoxTrack:
    """One object bounding box per frame."""

    boxes: list[Rect]

    @property
    def n_frames(self) -> int:
        return len(self.boxes)


@dataclass
class RoITrack:
    """Per-frame expanded crop rectangles sharing one fixed output size."""

    crops: list[Rect]
    crop_w: int
    crop_h: int

    def __post_init__(self):
        for r in self.crops:
            if (r.w, r.h) != (self.crop_w, self.crop_h):
                raise ValueError(f"crop {r} does not match fixed size "
                                 f"{self.crop_w}x{self.crop_h}")


@dataclass
class MaskPlane:
    """Latent-resolution edit mask with values in [0, 1]."""

    data: np.ndarray
    frame_index: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"mask plane must be 2-D, got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")


def load_box_track(path, n_frames: int) -> BoxTrack:
    """Parse a box-track file, requiring exactly frames 1..n_frames."""
    records: dict[int, Rect] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{line_no}: expected 'frame_index x y w h'")
        idx, x, y, w, h = (int(p) for p in parts)
        if idx in records:
            raise ValueError(f"{path}:{line_no}: duplicate frame index {idx}")
        if w < 0 or h < 0:
            raise ValueError(f"{path}:{line_no}: negative box size")
        records[idx] = Rect(x, y, w, h)
    missing = [i for i in range(1, n_frames + 1) if i not in records]
    if missing:
        raise ValueError(f"{path}: missing boxes for frames {missing}")
    extra = sorted(set(records) - set(range(1, n_frames + 1)))
    if extra:
        raise ValueError(f"{path}: boxes for unknown frames {extra}")
    return BoxTrack(boxes=[records[i] for i in range(1, n_frames + 1)])


def expand_boxes(track: BoxTrack, crop_w: int, crop_h: int,
                 frame_w: int, frame_h: int, margin: float = 0.25) -> RoITrack:
    """Expand each box to a fixed-size crop centered on it.

    Crops are shifted inward at frame borders so they stay fully inside the
    frame. If a box grown by the margin cannot fit inside the fixed crop it
    is clamped with a warning rather than failing the run.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if crop_w > frame_w or crop_h > frame_h:
        raise ValueError(
            f"crop {crop_w}x{crop_h} exceeds frame {frame_w}x{frame_h}")
    crops = []
    for i, box in enumerate(track.boxes, start=1):
        pad = margin * max(box.w, box.h)
        if box.w + 2 * pad > crop_w or box.h + 2 * pad > crop_h:
            logger.warning(
                "frame %d: box %s with margin does not fit the %dx%d crop; clamping",
                i, box, crop_w, crop_h)
        cx = box.x + box.w / 2.0
        cy = box.y + box.h / 2.0
        x0 = int(round(cx - crop_w / 2.0))
        y0 = int(round(cy - crop_h / 2.0))
        x0 = min(max(x0, 0), frame_w - crop_w)
        y0 = min(max(y0, 0), frame_h - crop_h)
        crops.append(Rect(x0, y0, crop_w, crop_h))
    return RoITrack(crops=crops, crop_w=crop_w, crop_h=crop_h)


def box_to_crop_mask(box: Rect, roi: Rect) -> np.ndarray:
    """Binary edit mask at crop resolution for a source-pixel box.

    The box is clipped to the crop; an empty box gives an all-zero mask.
    """
    mask = np.zeros((roi.h, roi.w), dtype=np.float64)
    x0 = max(box.x - roi.x, 0)
    y0 = max(box.y - roi.y, 0)
    x1 = min(box.x2 - roi.x, roi.w)
    y1 = min(box.y2 - roi.y, roi.h)
    if x1 > x0 and y1 > y0:
        mask[y0:y1, x0:x1] = 1.0
    return mask


def downsample_mask(mask: np.ndarray, factor: int = 8) -> np.ndarray:
    """Area-average downsample; edge cells get fractional coverage values."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask dims {mask.shape} must be divisible by {factor}")
    return mask.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def crop_and_encode(frame: np.ndarray, roi: Rect, box: Rect,
                    encoder: VAEHandle, frame_index: int = 1
                    ) -> tuple[LatentFrame, LatentFrame, MaskPlane]:
    """Extract the crop and produce its latents and downsampled mask.

    Returns the background latent, the masked-background latent (box region
    zeroed in pixel space before encoding) and the latent-resolution mask.
    """
    fh, fw = frame.shape[:2]
    if not Rect(0, 0, fw, fh).contains(roi):
        raise ValueError(f"roi {roi} is not inside the {fw}x{fh} frame")
    crop = np.asarray(frame, dtype=np.float64)[roi.y:roi.y2, roi.x:roi.x2]
    mask_px = box_to_crop_mask(box, roi)
    masked_crop = crop * (1.0 - mask_px[:, :, None])
    bg_latent = encoder.encode(crop)
    masked_latent = encoder.encode(masked_crop)
    bg_latent.frame_index = frame_index
    masked_latent.frame_index = frame_index
    mask = MaskPlane(downsample_mask(mask_px, encoder.scale_factor),
                     frame_index=frame_index)
    return bg_latent, masked_latent, mask


def composite_back(frame: np.ndarray, roi: Rect,
                   inpainted_crop: np.ndarray) -> np.ndarray:
    """Paste the finished crop into a copy of the frame.

    Pixels outside the crop rectangle are untouched by construction.
    """
    if inpainted_crop.shape[:2] != (roi.h, roi.w):
        raise ValueError(
            f"crop shape {inpainted_crop.shape[:2]} does not match roi "
            f"{(roi.h, roi.w)}")
    out = np.array(frame, dtype=np.float64, copy=True)
    out[roi.y:roi.y2, roi.x:roi.x2] = inpainted_crop
    return out
