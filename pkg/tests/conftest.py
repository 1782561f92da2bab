"""Shared fixtures: synthetic block videos and toy-stack run setups.

The toy codec is exact on images that are constant within each 8x8 block,
so synthetic fixtures are built on that grid, with box positions chosen so
that crop rectangles land on 8-pixel boundaries (centered crops keep the
block structure intact).
"""
from __future__ import annotations

import numpy as np
import pytest

from invi import io as vio
from invi.roi import Rect


def make_block_frame(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Random RGB frame, constant on each 8x8 block, exact at uint8."""
    blocks = rng.integers(0, 256, size=(h // 8, w // 8, 3)).astype(np.float64) / 255.0
    return np.repeat(np.repeat(blocks, 8, axis=0), 8, axis=1)


def make_block_video(n: int, h: int = 96, w: int = 96, seed: int = 7) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [make_block_frame(h, w, rng) for _ in range(n)]


def aligned_box_center(crop_w: int, crop_h: int, kx: int, ky: int) -> tuple[int, int]:
    """Box center whose centered crop origin lands on an 8-pixel boundary."""
    return crop_w // 2 + 8 * kx, crop_h // 2 + 8 * ky


def write_box_file(path, boxes: list[Rect]) -> None:
    lines = [f"{i} {b.x} {b.y} {b.w} {b.h}" for i, b in enumerate(boxes, start=1)]
    path.write_text("\n".join(lines) + "\n")


def empty_boxes_at(centers: list[tuple[int, int]]) -> list[Rect]:
    return [Rect(cx, cy, 0, 0) for cx, cy in centers]


@pytest.fixture
def toy_video_dir(tmp_path):
    """8-frame block video on disk plus empty, crop-aligned boxes."""
    frames = make_block_video(8, h=96, w=96, seed=3)
    video = tmp_path / "video"
    vio.write_frames(video, frames)
    centers = [aligned_box_center(64, 64, 1 + (i % 2), 1) for i in range(8)]
    boxes = tmp_path / "boxes.txt"
    write_box_file(boxes, empty_boxes_at(centers))
    return {"video": video, "boxes": boxes, "frames": frames, "tmp": tmp_path}


def toy_config_overrides(**extra) -> dict[str, str]:
    """Small, fast toy-stack settings shared by end-to-end tests."""
    base = {
        "model": "toy:zero",
        "vae": "toy:block",
        "steps_train": "10",
        "steps_infer": "5",
        "crop_w": "64",
        "crop_h": "64",
        "guidance_scale": "1.0",
        "seed": "0",
    }
    base.update({k: str(v) for k, v in extra.items()})
    return base
