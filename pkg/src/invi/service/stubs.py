"""Reference vision service implementing the segment/inpaint wire format.

A lightweight stand-in for the heavyweight external segmentation and
band-inpainting models: segmentation by luminance threshold, band filling
by diffusion-based image inpainting from OpenCV. Useful for local runs and
for exercising the HTTP clients end to end.
"""
from __future__ import annotations

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from ..io import (
    decode_mask_png_b64,
    decode_png_b64,
    encode_mask_png_b64,
    encode_png_b64,
    to_float,
    to_uint8,
)


class SegmentRequest(BaseModel):
    image: str
    label: str


class SegmentResponse(BaseModel):
    mask: str


class InpaintRequest(BaseModel):
    image: str
    mask: str


class InpaintResponse(BaseModel):
    image: str


def create_stub_vision_app(threshold: float = 0.5) -> FastAPI:
    app = FastAPI(title="invi-vision-stub")

    @app.post("/segment", response_model=SegmentResponse)
    def segment(request: SegmentRequest) -> SegmentResponse:
        try:
            image = decode_png_b64(request.image)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        mask = (image.mean(axis=2) >= threshold).astype(np.float64)
        return SegmentResponse(mask=encode_mask_png_b64(mask))

    @app.post("/inpaint", response_model=InpaintResponse)
    def inpaint(request: InpaintRequest) -> InpaintResponse:
        try:
            image = decode_png_b64(request.image)
            band = decode_mask_png_b64(request.mask)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if band.shape != image.shape[:2]:
            raise HTTPException(status_code=400, detail="mask/image size mismatch")
        band_u8 = (band >= 0.5).astype(np.uint8)
        filled = cv2.inpaint(cv2.cvtColor(to_uint8(image), cv2.COLOR_RGB2BGR),
                             band_u8, 3, cv2.INPAINT_TELEA)
        filled_rgb = to_float(cv2.cvtColor(filled, cv2.COLOR_BGR2RGB))
        return InpaintResponse(image=encode_png_b64(filled_rgb))

    return app
