"""Edit service: a thin HTTP wrapper over the manifest runner.

Requests carry filesystem paths, not pixel payloads, so the service is
meant to run next to the data (localhost by default). Stage failures come
back as structured errors naming the failing stage and frame index.
"""
from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ManifestError, ModelLoadError, PipelineStageError
from ..runner import RunManifest, evaluate_videos, run_manifest
from .models import EvalRequest, EvalResponse, HealthResponse, RunRequest, RunResponse


def create_app() -> FastAPI:
    app = FastAPI(title="invi", version=__version__)

    @app.exception_handler(ManifestError)
    async def manifest_error(_, exc: ManifestError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(_, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ModelLoadError)
    async def load_error(_, exc: ModelLoadError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(PipelineStageError)
    async def stage_error(_, exc: PipelineStageError):
        return JSONResponse(status_code=500, content={
            "detail": str(exc),
            "stage": exc.stage,
            "frame_index": exc.frame_index,
        })

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        manifest = RunManifest(
            video=request.video, boxes=request.boxes, out=request.out,
            prompt=request.prompt, control_dir=request.control_dir,
            control_kind=request.control_kind, config_path=request.config,
            mode=request.mode, postprocess=request.postprocess,
            dump_frames=request.dump_frames, overrides=request.overrides)
        return RunResponse(**run_manifest(manifest))

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(request: EvalRequest) -> EvalResponse:
        return EvalResponse(**evaluate_videos(
            request.original, request.edited, mask=request.mask,
            prompt=request.prompt, config_path=request.config,
            overrides=request.overrides))

    return app
