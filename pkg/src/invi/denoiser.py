"""Noise-prediction models for the 9-channel inpainting contract.

A denoiser consumes the channel concatenation noisy latent (4) || masked
background latent (4) || downsampled mask (1), a timestep, a prompt
embedding and an optional control image, and predicts the 4-channel noise.
Self-attention layers are routed through an :class:`AttentionHook` so the
pipeline can record key/value features or extend attention with a cached
anchor frame.

Three deterministic toy denoisers ship for tests and offline runs; real
checkpoints attach through :func:`load_pretrained` with the same interface.
"""
from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import AnchorCache, AnchorCacheBuilder, KVPair, extended_attention
from .errors import ModelLoadError

CONTROL_KINDS = ("pose", "canny", "depth", "normal")

HOOK_SELF_ONLY = "self_only"
HOOK_ANCHOR_EXTENDED = "anchor_extended"
HOOK_RECORD = "record"
HOOK_MODES = (HOOK_SELF_ONLY, HOOK_ANCHOR_EXTENDED, HOOK_RECORD)


@dataclass
class PromptEmbedding:
    """Token embeddings for an edit prompt."""

    tokens: np.ndarray
    source_text: str

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError("prompt tokens must be a non-empty (n, width) matrix")

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def embed_prompt(text: str, seed: int = 0, n_tokens: int = 4,
                 width: int = 16) -> PromptEmbedding:
    """Seeded hash embedding: deterministic per (text, seed), no model needed."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    tokens = rng.standard_normal((n_tokens, width)) / np.sqrt(width)
    return PromptEmbedding(tokens=tokens, source_text=text)


@dataclass
class ControlImage:
    """Spatial conditioning image (pose/canny/depth/normal) at crop resolution."""

    data: np.ndarray
    kind: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"control image must be (H, W, 3), got {self.data.shape}")
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.kind!r}")


@dataclass
class DenoiserInput:
    """Conditioning bundle for one denoising call.

    The channel order of the stacked input is fixed: noisy latent, then
    masked background latent, then mask.
    """

    noisy_latent: np.ndarray
    masked_bg_latent: np.ndarray
    mask: np.ndarray
    timestep: int
    prompt: PromptEmbedding
    control: ControlImage | None = None
    guidance_scale: float = 1.0

    def __post_init__(self):
        self.noisy_latent = np.asarray(self.noisy_latent, dtype=np.float64)
        self.masked_bg_latent = np.asarray(self.masked_bg_latent, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        h, w = self.noisy_latent.shape[:2]
        if self.noisy_latent.shape != (h, w, 4):
            raise ValueError(f"noisy latent must be (h, w, 4), got {self.noisy_latent.shape}")
        if self.masked_bg_latent.shape != (h, w, 4):
            raise ValueError(
                f"masked background latent shape {self.masked_bg_latent.shape} "
                f"does not match noisy latent {(h, w, 4)}")
        if self.mask.shape != (h, w, 1):
            raise ValueError(f"mask must be (h, w, 1), got {self.mask.shape}")
        if self.mask.min() < 0.0 or self.mask.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        if self.guidance_scale < 1.0:
            raise ValueError(f"guidance scale must be >= 1, got {self.guidance_scale}")

    def stacked(self) -> np.ndarray:
        """The 9-channel conditioning plane."""
        return np.concatenate(
            [self.noisy_latent, self.masked_bg_latent, self.mask], axis=2)


@dataclass
class AttentionHook:
    """Controls what self-attention layers do during one denoising call.

    self_only: plain self-attention. record: plain self-attention, storing
    each layer's K/V into ``recorder``. anchor_extended: attend over own
    plus cached anchor tokens, optionally recording own K/V as well.
    """

    mode: str = HOOK_SELF_ONLY
    anchor: AnchorCache | None = None
    recorder: AnchorCacheBuilder | None = None

    def __post_init__(self):
        if self.mode not in HOOK_MODES:
            raise ValueError(f"unknown hook mode {self.mode!r}")
        if (self.anchor is not None) != (self.mode == HOOK_ANCHOR_EXTENDED):
            raise ValueError("anchor must be present exactly when mode is anchor_extended")
        if self.mode == HOOK_RECORD and self.recorder is None:
            raise ValueError("record mode requires a recorder")
        if self.mode == HOOK_SELF_ONLY and self.recorder is not None:
            raise ValueError("self_only mode must not carry a recorder")


class DenoiserHandle(ABC):
    """Immutable noise-prediction model."""

    descriptor: str = ""
    self_attention_layers: tuple[int, ...] = ()
    attention_heads: int = 1

    @abstractmethod
    def predict_eps(self, inp: DenoiserInput, hook: AttentionHook) -> np.ndarray:
        """Predict the 4-channel noise for the bundled conditioning."""


def classifier_free_guide(eps_cond: np.ndarray, eps_uncond: np.ndarray,
                          scale: float) -> np.ndarray:
    """Extrapolate from the unconditional toward the conditional prediction."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(
            f"prediction shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    if scale < 1.0:
        raise ValueError(f"guidance scale must be >= 1, got {scale}")
    if scale == 1.0:
        return eps_cond
    return eps_uncond + scale * (eps_cond - eps_uncond)


class ZeroDenoiser(DenoiserHandle):
    """Predicts zero noise everywhere; inversion and sampling become exact
    rescalings, which makes conservation properties checkable."""

    descriptor = "toy:zero"

    def predict_eps(self, inp: DenoiserInput, hook: AttentionHook) -> np.ndarray:
        return np.zeros_like(inp.noisy_latent)


class LinearDenoiser(DenoiserHandle):
    """Seeded fixed linear map from the 9 conditioning channels to the 4
    noise channels, applied pointwise, plus a constant bias.

    The state-dependent gain is kept small so that inversion followed by
    sampling retraces the trajectory to well under 1e-4; the bias keeps the
    prediction visibly nonzero without affecting that round trip.
    """

    descriptor = "toy:linear"

    def __init__(self, seed: int = 0, gain: float = 1e-3, bias_scale: float = 0.05):
        rng = np.random.default_rng([seed, 0x11EA])
        self.mix = rng.standard_normal((9, 4)) / 3.0
        self.bias = bias_scale * rng.standard_normal(4)
        self.gain = gain

    def predict_eps(self, inp: DenoiserInput, hook: AttentionHook) -> np.ndarray:
        return self.gain * (inp.stacked() @ self.mix) + self.bias


class TinyUNetDenoiser(DenoiserHandle):
    """Two-level deterministic toy network with two self-attention layers.

    Level sizes are H/2 and H/4 of the latent grid, one attention layer at
    each, two heads per layer; all weights are drawn once from the seed.
    Exercises the full attention-hook lifecycle at negligible cost. Latent
    dims must be divisible by 4.
    """

    descriptor = "toy:tiny-unet"
    self_attention_layers = (0, 1)
    attention_heads = 2

    CHANNELS = 8

    def __init__(self, seed: int = 0):
        c = self.CHANNELS
        rng = np.random.default_rng([seed, 0x7141])
        self.w_in = rng.standard_normal((9, c)) / 3.0
        self.b_in = 0.1 * rng.standard_normal(c)
        self.w_prompt = rng.standard_normal((16, c)) / 4.0
        self.w_ctrl = rng.standard_normal((3, c)) / 2.0
        self.t_freq = np.exp(np.linspace(0.0, 3.0, c))
        self.w_q = rng.standard_normal((2, c, c)) / np.sqrt(c)
        self.w_k = rng.standard_normal((2, c, c)) / np.sqrt(c)
        self.w_v = rng.standard_normal((2, c, c)) / np.sqrt(c)
        self.w_o = rng.standard_normal((2, c, c)) / np.sqrt(c)
        self.w_out = 0.05 * rng.standard_normal((c, 4))
        self.b_out = 0.02 * rng.standard_normal(4)

    @staticmethod
    def _pool2(h: np.ndarray) -> np.ndarray:
        hh, ww, c = h.shape
        return h.reshape(hh // 2, 2, ww // 2, 2, c).mean(axis=(1, 3))

    @staticmethod
    def _up2(h: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(h, 2, axis=0), 2, axis=1)

    def _attend(self, feat: np.ndarray, layer: int, timestep: int,
                hook: AttentionHook) -> np.ndarray:
        hh, ww, c = feat.shape
        tokens = feat.reshape(hh * ww, c)
        q_full = tokens @ self.w_q[layer]
        k_full = tokens @ self.w_k[layer]
        v_full = tokens @ self.w_v[layer]

        anchor_pair = None
        if hook.mode == HOOK_ANCHOR_EXTENDED:
            anchor_pair = hook.anchor.load(layer, timestep)
        if hook.mode in (HOOK_RECORD, HOOK_ANCHOR_EXTENDED) and hook.recorder is not None:
            hook.recorder.store(layer, timestep,
                                KVPair(k_full, v_full, layer=layer, timestep=timestep))

        # Anchor tokens concatenate per head along the token axis; slicing the
        # full-width matrices per head after row-concatenation is equivalent.
        dh = c // self.attention_heads
        out = np.empty_like(tokens)
        for h in range(self.attention_heads):
            cols = slice(h * dh, (h + 1) * dh)
            self_kv = KVPair(k_full[:, cols], v_full[:, cols],
                             layer=layer, timestep=timestep)
            anchor_kv = None
            if anchor_pair is not None:
                anchor_kv = KVPair(anchor_pair.k[:, cols], anchor_pair.v[:, cols],
                                   layer=layer, timestep=timestep)
            out[:, cols] = extended_attention(q_full[:, cols], self_kv, anchor_kv)
        return (out @ self.w_o[layer]).reshape(hh, ww, c)

    def predict_eps(self, inp: DenoiserInput, hook: AttentionHook) -> np.ndarray:
        x = inp.stacked()
        hh, ww = x.shape[:2]
        if hh % 4 or ww % 4:
            raise ValueError(f"tiny-unet needs latent dims divisible by 4, got {(hh, ww)}")
        temb = np.sin(inp.timestep / self.t_freq)
        pemb = inp.prompt.tokens.mean(axis=0) @ self.w_prompt[:inp.prompt.width]
        h0 = x @ self.w_in + self.b_in + temb + pemb
        if inp.control is not None:
            ctrl = inp.control.data
            fy, fx = ctrl.shape[0] // hh, ctrl.shape[1] // ww
            ctrl_grid = ctrl.reshape(hh, fy, ww, fx, 3).mean(axis=(1, 3))
            h0 = h0 + ctrl_grid @ self.w_ctrl
        h0 = np.tanh(h0)

        d1 = self._pool2(h0)
        a1 = d1 + self._attend(d1, 0, inp.timestep, hook)
        d2 = self._pool2(a1)
        a2 = d2 + self._attend(d2, 1, inp.timestep, hook)
        u1 = self._up2(a2) + a1
        u0 = self._up2(u1) + h0
        return u0 @ self.w_out + self.b_out


def load_pretrained(descriptor: str, control_path: str | None = None,
                    seed: int = 0) -> DenoiserHandle:
    """Materialize a denoiser from its descriptor.

    Toy descriptors: ``toy:zero``, ``toy:linear``, ``toy:tiny-unet``.
    Anything else is treated as a path to pretrained inpainting weights and
    needs the optional diffusers runtime; a control-weight path attaches the
    spatial-conditioning branch.
    """
    if descriptor == "toy:zero":
        return ZeroDenoiser()
    if descriptor == "toy:linear":
        return LinearDenoiser(seed=seed)
    if descriptor == "toy:tiny-unet":
        return TinyUNetDenoiser(seed=seed)
    path = Path(descriptor)
    if not path.exists():
        raise ModelLoadError(f"denoiser weights not found: {descriptor}")
    if control_path is not None and not Path(control_path).exists():
        raise ModelLoadError(f"control weights not found: {control_path}")
    try:
        import diffusers  # noqa: F401
    except ImportError as exc:
        raise ModelLoadError(
            "loading pretrained denoiser weights requires the optional "
            "'diffusers' runtime") from exc
    raise ModelLoadError(
        f"no adapter registered for denoiser weights at {descriptor}")
