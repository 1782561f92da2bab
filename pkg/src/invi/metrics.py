"""Evaluation harness for edited videos.

Four scores: prompt alignment (mean embedding cosine between each frame and
the prompt), temporal appearance consistency (mean cosine between
consecutive frame embeddings), background preservation (mean per-pixel L1
over background-mask pixels, in 0-255 intensity units) and perceptual
consecutive-frame distance.

Embedders and the perceptual model are injected; deterministic stubs ship
for tests and offline evaluation, real models can be plugged behind the
same interfaces.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .denoiser import embed_prompt

logger = logging.getLogger(__name__)


class Embedder(ABC):
    """Joint image/text embedding provider."""

    @abstractmethod
    def embed_image(self, frame: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray: ...


class PerceptualModel(ABC):
    """Pairwise perceptual distance between frames; lower means more similar."""

    @abstractmethod
    def distance(self, a: np.ndarray, b: np.ndarray) -> float: ...


class StubPatchEmbedder(Embedder):
    """Deterministic embedding stub: seeded projection of an 8x8 gray patch
    grid for images, seeded hash vectors for text."""

    def __init__(self, seed: int = 0, dim: int = 32):
        self.seed = seed
        self.dim = dim
        rng = np.random.default_rng([seed, 0xE3B])
        self.proj = rng.standard_normal((64, dim)) / 8.0

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        gray = np.asarray(frame, dtype=np.float64).mean(axis=2)
        h, w = gray.shape
        ys = (np.arange(8) * h) // 8
        xs = (np.arange(8) * w) // 8
        hh, ww = h // 8 or 1, w // 8 or 1
        patches = np.array([[gray[y:y + hh, x:x + ww].mean() for x in xs] for y in ys])
        return patches.reshape(64) @ self.proj

    def embed_text(self, text: str) -> np.ndarray:
        return embed_prompt(text, seed=self.seed, n_tokens=1,
                            width=self.dim).tokens[0]


class MeanAbsDiffPerceptual(PerceptualModel):
    """Distance stub: mean absolute pixel difference."""

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.mean(np.abs(np.asarray(a, dtype=np.float64)
                                    - np.asarray(b, dtype=np.float64))))


def load_embedder(descriptor: str, seed: int = 0) -> Embedder:
    if descriptor == "stub:patch":
        return StubPatchEmbedder(seed=seed)
    raise ValueError(f"unknown embedder descriptor {descriptor!r}; "
                     "inject a custom Embedder for real models")


def load_perceptual(descriptor: str) -> PerceptualModel:
    if descriptor == "stub:l1":
        return MeanAbsDiffPerceptual()
    raise ValueError(f"unknown perceptual-model descriptor {descriptor!r}; "
                     "inject a custom PerceptualModel for real models")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def clip_text_score(frames: Sequence[np.ndarray], prompt: str,
                    embedder: Embedder) -> float:
    """Mean cosine similarity between each frame embedding and the prompt
    embedding.

    Args:
        frames: at least one RGB frame in [0, 1].
        prompt: the edit text.
        embedder: joint embedding provider.
    """
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    text_emb = embedder.embed_text(prompt)
    return float(np.mean([_cosine(embedder.embed_image(f), text_emb)
                          for f in frames]))


def clip_temp_score(frames: Sequence[np.ndarray], embedder: Embedder) -> float:
    """Mean cosine similarity over consecutive frame-embedding pairs."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    embs = [embedder.embed_image(f) for f in frames]
    return float(np.mean([_cosine(a, b) for a, b in zip(embs[:-1], embs[1:])]))


def back_l1(original: Sequence[np.ndarray], edited: Sequence[np.ndarray],
            masks: Sequence[np.ndarray]) -> float:
    """Mean per-pixel L1 distance over background pixels, 0-255 units.

    The mean pools all masked pixels across the whole video, so streamed and
    whole-video computation agree and disjoint mask regions compose by pixel
    count. Masks are per-frame weights in [0, 1] over the background.
    """
    if not (len(original) == len(edited) == len(masks)):
        raise ValueError(
            f"misaligned inputs: {len(original)} original, {len(edited)} edited, "
            f"{len(masks)} masks")
    total = 0.0
    weight = 0.0
    for orig, edit, mask in zip(original, edited, masks):
        orig = np.asarray(orig, dtype=np.float64)
        edit = np.asarray(edit, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        if orig.shape != edit.shape or mask.shape != orig.shape[:2]:
            raise ValueError("frame/mask shapes misaligned")
        channels = orig.shape[2] if orig.ndim == 3 else 1
        diff = np.abs(orig - edit)
        if diff.ndim == 3:
            diff = diff.sum(axis=2)
        total += float((diff * mask).sum())
        weight += float(mask.sum()) * channels
    if weight == 0.0:
        raise ValueError("background mask is empty across the whole video")
    return 255.0 * total / weight


def lpips_consecutive(frames: Sequence[np.ndarray],
                      model: PerceptualModel) -> float:
    """Mean perceptual distance over consecutive frame pairs."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    return float(np.mean([model.distance(a, b)
                          for a, b in zip(frames[:-1], frames[1:])]))


@dataclass
class MetricsReport:
    """Computed scores; a field is None when its inputs were unavailable."""

    clip_text: float | None = None
    clip_temp: float | None = None
    back_l1: float | None = None
    lpips: float | None = None

    def to_dict(self) -> dict[str, float]:
        return {k: v for k, v in vars(self).items() if v is not None}

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v:.6f}" for k, v in self.to_dict().items())


def compute_report(edited: Sequence[np.ndarray],
                   original: Sequence[np.ndarray] | None = None,
                   prompt: str | None = None,
                   masks: Sequence[np.ndarray] | None = None,
                   embedder: Embedder | None = None,
                   perceptual: PerceptualModel | None = None) -> MetricsReport:
    """Compute every score whose inputs are present.

    Prompt alignment needs a prompt; background L1 needs the original frames
    and a background mask; the consecutive-frame scores need at least two
    frames. A missing perceptual model omits that score with a warning.
    """
    embedder = embedder or StubPatchEmbedder()
    report = MetricsReport()
    if prompt is not None:
        report.clip_text = clip_text_score(edited, prompt, embedder)
    if len(edited) >= 2:
        report.clip_temp = clip_temp_score(edited, embedder)
        if perceptual is None:
            logger.warning("no perceptual model available; lpips omitted")
        else:
            report.lpips = lpips_consecutive(edited, perceptual)
    if original is not None and masks is not None:
        report.back_l1 = back_l1(original, edited, masks)
    return report
