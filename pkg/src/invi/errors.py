"""Exception types shared across the package."""


class InviError(Exception):
    """Base class for all package-specific errors."""


class CacheMissError(InviError, LookupError):
    """Requested (layer, timestep) entry is absent from the anchor cache.

    Raised only when the pipeline asks for features that were never
    recorded, which indicates an ordering bug upstream.
    """


class ModelLoadError(InviError):
    """A model descriptor (denoiser, autoencoder, embedder) could not be
    materialized into a usable handle."""


class SegmenterError(InviError):
    """The segmentation client failed after exhausting its retries."""


class BandInpainterError(InviError):
    """The band-inpainting client failed after exhausting its retries."""


class ClientProtocolError(InviError):
    """A vision-service response did not match the documented wire format."""


class ManifestError(InviError):
    """A run manifest references inputs that do not exist or disagree."""


class PipelineStageError(InviError):
    """A pipeline stage failed; carries the frame index for diagnostics."""

    def __init__(self, stage: str, frame_index: int, message: str):
        super().__init__(f"{stage} failed at frame {frame_index}: {message}")
        self.stage = stage
        self.frame_index = frame_index
