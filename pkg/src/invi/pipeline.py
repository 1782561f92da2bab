"""Frame-sequential edit pipeline.

Stages, in order: invert every frame's background latent into a noisy
trajectory, inpaint the first frame while recording its attention features,
then walk the remaining frames auto-regressively, each one attending over
the immediately preceding frame's cached features and recording its own for
promotion. Per-frame outputs are the clean latents after the final step,
decoded back to crop images.

The per-frame baseline mode skips the anchor machinery entirely and treats
every frame like a first frame, which reproduces independent single-frame
runs bit for bit under a shared seed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AnchorCache, AnchorCacheBuilder, cache_promote
from .denoiser import (
    HOOK_ANCHOR_EXTENDED,
    HOOK_RECORD,
    HOOK_SELF_ONLY,
    AttentionHook,
    ControlImage,
    DenoiserHandle,
    DenoiserInput,
    PromptEmbedding,
    classifier_free_guide,
    embed_prompt,
    load_pretrained,
)
from .errors import PipelineStageError
from .roi import MaskPlane, downsample_mask
from .schedule import (
    LatentFrame,
    LatentTrajectory,
    NoiseSchedule,
    TrajectoryRow,
    ddim_invert_trajectory,
    ddim_step,
    make_schedule,
)
from .vae import VAEHandle, load_vae

MODE_INVI = "invi"
MODE_PER_FRAME = "per_frame"
MODES = (MODE_INVI, MODE_PER_FRAME)


@dataclass
class EditConfig:
    """Run-level knobs; see the README for the config-file key reference."""

    prompt: str = ""
    control_kind: str = "none"
    steps_train: int = 1000
    steps_infer: int = 50
    beta_start: float = 0.00085
    beta_end: float = 0.012
    spacing: str = "scaled_linear"
    guidance_scale: float = 1.0
    seed: int = 0
    crop_w: int = 512
    crop_h: int = 512
    margin: float = 0.25
    model: str = "toy:tiny-unet"
    control_model: str = ""
    vae: str = "toy:block"
    mode: str = MODE_INVI
    latent_blend: bool = False
    invert_with_prompt: bool = False
    postprocess: bool = False
    pp_dilation_frac: float = 0.03
    pp_label: str = ""
    pp_segmenter: str = "stub:threshold"
    pp_inpainter: str = "stub:source"
    pp_timeout: float = 10.0
    pp_retries: int = 2
    fps: float = 8.0

    def validate(self) -> None:
        if self.steps_infer < 1:
            raise ValueError("steps_infer must be >= 1")
        if self.steps_infer > self.steps_train:
            raise ValueError("steps_infer cannot exceed steps_train")
        if self.guidance_scale < 1.0:
            raise ValueError("guidance_scale must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.crop_w % 8 or self.crop_h % 8:
            raise ValueError("crop dims must be divisible by 8")


@dataclass
class RunStats:
    """Instrumentation collected over one pipeline run."""

    anchor_sequence: list[int] = field(default_factory=list)
    cache_entries_per_frame: list[int] = field(default_factory=list)
    peak_live_caches: int = 0
    live_caches: int = 0
    timesteps: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    def cache_created(self) -> None:
        self.live_caches += 1
        self.peak_live_caches = max(self.peak_live_caches, self.live_caches)

    def cache_released(self) -> None:
        self.live_caches -= 1

    def to_dict(self) -> dict:
        return {
            "anchor_sequence": list(self.anchor_sequence),
            "cache_entries_per_frame": list(self.cache_entries_per_frame),
            "peak_live_caches": self.peak_live_caches,
            "timesteps": list(self.timesteps),
            "wall_time": self.wall_time,
        }


@dataclass
class EditResult:
    """Final latents and decoded crops, one per input frame, plus stats."""

    latents: list[LatentFrame]
    crops: list[np.ndarray]
    stats: RunStats


@dataclass
class FrameInputs:
    """Encoded conditioning for one frame."""

    bg_latent: LatentFrame
    masked_bg_latent: LatentFrame
    mask: MaskPlane
    control: ControlImage | None = None


def invert_background(bg_latents: Sequence[LatentFrame], denoiser: DenoiserHandle,
                      sched: NoiseSchedule, cfg: EditConfig,
                      prompt: PromptEmbedding | None = None) -> LatentTrajectory:
    """Invert every frame's background latent over the inference grid.

    The same deterministic noise pattern per frame is what keeps the video
    consistent; fresh Gaussian noise never enters here. Inversion runs with
    a zero mask and the unmasked background as its own conditioning; by
    default the prompt is the empty one.
    """
    shapes = {x.shape for x in bg_latents}
    if len(shapes) != 1:
        raise ValueError(f"background latents must share one shape, got {shapes}")
    timesteps = sched.inference_timesteps(cfg.steps_infer)
    if prompt is None:
        text = cfg.prompt if cfg.invert_with_prompt else ""
        prompt = embed_prompt(text, seed=cfg.seed)
    zero_hook = AttentionHook(HOOK_SELF_ONLY)
    h, w = bg_latents[0].shape[:2]
    zero_mask = np.zeros((h, w, 1))
    rows = []
    for x0 in bg_latents:
        def eps_fn(z: LatentFrame, _bg=x0) -> np.ndarray:
            inp = DenoiserInput(z.data, _bg.data, zero_mask, z.timestep, prompt)
            return denoiser.predict_eps(inp, zero_hook)

        rows.append(ddim_invert_trajectory(x0, eps_fn, sched, timesteps))
    return LatentTrajectory(rows=rows)


def _denoise_frame(row: TrajectoryRow, inputs: FrameInputs, anchor: AnchorCache | None,
                   denoiser: DenoiserHandle, sched: NoiseSchedule, cfg: EditConfig,
                   cond: PromptEmbedding, uncond: PromptEmbedding,
                   stats: RunStats | None = None
                   ) -> tuple[LatentFrame, AnchorCacheBuilder]:
    """Shared descending-timestep loop; records this frame's features while
    optionally extending attention with the anchor's."""
    grid = row.timesteps
    builder = AnchorCacheBuilder(row.frame_index, denoiser.self_attention_layers, grid)
    if stats is not None:
        stats.cache_created()
    if anchor is None:
        hook = AttentionHook(HOOK_RECORD, recorder=builder)
    else:
        hook = AttentionHook(HOOK_ANCHOR_EXTENDED, anchor=anchor, recorder=builder)
    plain = AttentionHook(HOOK_SELF_ONLY)

    mask1 = inputs.mask.data[:, :, None]
    z = row.at(grid[-1])
    descending = list(reversed(grid))
    for i, t in enumerate(descending):
        t_prev = descending[i + 1] if i + 1 < len(descending) else 0
        inp = DenoiserInput(z.data, inputs.masked_bg_latent.data, mask1, t,
                            cond, inputs.control, cfg.guidance_scale)
        eps = denoiser.predict_eps(inp, hook)
        if cfg.guidance_scale > 1.0:
            inp_u = DenoiserInput(z.data, inputs.masked_bg_latent.data, mask1, t,
                                  uncond, inputs.control, cfg.guidance_scale)
            eps = classifier_free_guide(eps, denoiser.predict_eps(inp_u, plain),
                                        cfg.guidance_scale)
        z = ddim_step(z, z.with_data(eps, timestep=t), t, t_prev, sched)
        if cfg.latent_blend and t_prev > 0:
            # Keep the known background on the inverted trajectory outside
            # the edit region; only for models without the 9-channel head.
            z = z.with_data(mask1 * z.data + (1.0 - mask1) * row.at(t_prev).data,
                            timestep=t_prev)
    return z, builder


def inpaint_first_frame(row: TrajectoryRow, inputs: FrameInputs,
                        denoiser: DenoiserHandle, sched: NoiseSchedule,
                        cfg: EditConfig, cond: PromptEmbedding,
                        uncond: PromptEmbedding, stats: RunStats | None = None
                        ) -> tuple[LatentFrame, AnchorCache]:
    """Denoise one frame in record mode and return its complete feature cache."""
    final, builder = _denoise_frame(row, inputs, None, denoiser, sched, cfg,
                                    cond, uncond, stats)
    return final, builder.finalize()


def inpaint_frame_with_anchor(row: TrajectoryRow, inputs: FrameInputs,
                              anchor: AnchorCache, denoiser: DenoiserHandle,
                              sched: NoiseSchedule, cfg: EditConfig,
                              cond: PromptEmbedding, uncond: PromptEmbedding,
                              stats: RunStats | None = None
                              ) -> tuple[LatentFrame, AnchorCacheBuilder]:
    """Denoise frame i >= 2 against the anchor cache, returning the frame's
    own recorded features ready for promotion."""
    if row.frame_index < 2:
        raise ValueError("anchored inpainting starts at frame 2")
    return _denoise_frame(row, inputs, anchor, denoiser, sched, cfg,
                          cond, uncond, stats)


def encode_frame_inputs(crop: np.ndarray, mask_px: np.ndarray, vae: VAEHandle,
                        control: ControlImage | None = None,
                        frame_index: int = 1) -> FrameInputs:
    """Encode a crop and its pixel-space mask into denoiser conditioning."""
    crop = np.asarray(crop, dtype=np.float64)
    mask_px = np.asarray(mask_px, dtype=np.float64)
    if mask_px.shape != crop.shape[:2]:
        raise ValueError(
            f"mask shape {mask_px.shape} does not match crop {crop.shape[:2]}")
    bg = vae.encode(crop)
    masked = vae.encode(crop * (1.0 - mask_px[:, :, None]))
    bg.frame_index = masked.frame_index = frame_index
    mask = MaskPlane(downsample_mask(mask_px, vae.scale_factor), frame_index)
    return FrameInputs(bg, masked, mask, control)


def run(crops: Sequence[np.ndarray], masks: Sequence[np.ndarray],
        controls: Sequence[ControlImage] | None, cfg: EditConfig,
        denoiser: DenoiserHandle | None = None,
        vae: VAEHandle | None = None) -> EditResult:
    """Execute the full pipeline over aligned per-frame crops and masks.

    Any stage failure is re-raised with the offending frame index attached.
    """
    cfg.validate()
    n = len(crops)
    if n < 1:
        raise ValueError("need at least one frame")
    if len(masks) != n:
        raise ValueError(f"got {n} crops but {len(masks)} masks")
    if controls is not None and len(controls) != n:
        raise ValueError(f"got {n} crops but {len(controls)} control images")

    if denoiser is None:
        denoiser = load_pretrained(cfg.model, cfg.control_model or None, cfg.seed)
    if vae is None:
        vae = load_vae(cfg.vae)
    sched = make_schedule(cfg.steps_train, cfg.beta_start, cfg.beta_end, cfg.spacing)
    cond = embed_prompt(cfg.prompt, seed=cfg.seed)
    uncond = embed_prompt("", seed=cfg.seed)

    stats = RunStats(timesteps=sched.inference_timesteps(cfg.steps_infer))
    started = time.perf_counter()

    inputs: list[FrameInputs] = []
    for i in range(n):
        try:
            ctrl = controls[i] if controls is not None else None
            inputs.append(encode_frame_inputs(crops[i], masks[i], vae, ctrl, i + 1))
        except Exception as exc:
            raise PipelineStageError("encode", i + 1, str(exc)) from exc

    try:
        traj = invert_background([fi.bg_latent for fi in inputs], denoiser, sched, cfg)
    except Exception as exc:
        raise PipelineStageError("invert", 1, str(exc)) from exc

    latents: list[LatentFrame] = []
    anchor: AnchorCache | None = None
    for i in range(1, n + 1):
        try:
            if cfg.mode == MODE_PER_FRAME or i == 1:
                final, cache = inpaint_first_frame(
                    traj.row(i), inputs[i - 1], denoiser, sched, cfg,
                    cond, uncond, stats)
                if cfg.mode == MODE_PER_FRAME:
                    stats.cache_entries_per_frame.append(len(cache))
                    stats.cache_released()
                else:
                    anchor = cache
                    stats.cache_entries_per_frame.append(len(anchor))
            else:
                stats.anchor_sequence.append(anchor.anchor_frame_index)
                final, builder = inpaint_frame_with_anchor(
                    traj.row(i), inputs[i - 1], anchor, denoiser, sched, cfg,
                    cond, uncond, stats)
                anchor = cache_promote(anchor, builder)
                stats.cache_released()
                stats.cache_entries_per_frame.append(len(anchor))
            latents.append(final)
        except Exception as exc:
            raise PipelineStageError("denoise", i, str(exc)) from exc

    decoded = []
    for i, z in enumerate(latents, start=1):
        try:
            decoded.append(vae.decode(z))
        except Exception as exc:
            raise PipelineStageError("decode", i, str(exc)) from exc

    stats.wall_time = time.perf_counter() - started
    return EditResult(latents=latents, crops=decoded, stats=stats)
