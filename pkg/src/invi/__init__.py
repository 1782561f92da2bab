"""Video object insertion and replacement with anchor-conditioned inpainting."""

__version__ = "0.1.0"

from .attention import AnchorCache, AnchorCacheBuilder, KVPair, extended_attention
from .denoiser import (
    AttentionHook,
    ControlImage,
    DenoiserInput,
    PromptEmbedding,
    classifier_free_guide,
    load_pretrained,
)
from .pipeline import EditConfig, EditResult, run
from .schedule import (
    LatentFrame,
    LatentTrajectory,
    NoiseSchedule,
    ddim_invert_step,
    ddim_invert_trajectory,
    ddim_step,
    forward_sample,
    make_schedule,
)
from .vae import load_vae

__all__ = [
    "AnchorCache",
    "AnchorCacheBuilder",
    "AttentionHook",
    "ControlImage",
    "DenoiserInput",
    "EditConfig",
    "EditResult",
    "KVPair",
    "LatentFrame",
    "LatentTrajectory",
    "NoiseSchedule",
    "PromptEmbedding",
    "classifier_free_guide",
    "ddim_invert_step",
    "ddim_invert_trajectory",
    "ddim_step",
    "extended_attention",
    "forward_sample",
    "load_pretrained",
    "load_vae",
    "make_schedule",
    "run",
]
