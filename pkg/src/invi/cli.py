"""Command-line entry points.

The CLI is a thin client of the edit service: ``run`` and ``eval`` build a
request and POST it. Without ``--server`` the service app runs in-process
over an ASGI transport, so no separate server is needed; with ``--server``
the same requests go to a remote instance. ``serve`` starts the service.
"""
from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

from .runner import RunManifest, validate_manifest
from .errors import ManifestError


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=payload)
    else:
        from .service import create_app

        async def in_process() -> httpx.Response:
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://invi.local",
                                         timeout=None) as client:
                return await client.post(path, json=payload)

        resp = asyncio.run(in_process())
    try:
        body = resp.json()
    except ValueError:
        raise click.ClickException(
            f"service returned {resp.status_code}: {resp.text[:200]}")
    if resp.status_code != 200:
        detail = body.get("detail", body) if isinstance(body, dict) else body
        if isinstance(body, dict) and "frame_index" in body:
            detail = f"{detail} (stage={body['stage']}, frame={body['frame_index']})"
        raise click.ClickException(str(detail))
    return body


@click.group()
def main():
    """Insert or replace objects in videos with anchor-conditioned inpainting."""


@main.command()
@click.option("--video", required=True, help="Input video file or frame directory.")
@click.option("--boxes", required=True, help="Box-track file (frame_index x y w h).")
@click.option("--control", "control_dir", default=None,
              help="Directory of frame-indexed control images.")
@click.option("--control-kind", default="none",
              type=click.Choice(["pose", "canny", "depth", "normal", "none"]))
@click.option("--prompt", default="", help="Edit prompt.")
@click.option("--config", "config_path", default=None, help="Config file path.")
@click.option("--out", required=True, help="Output video file or frame directory.")
@click.option("--mode", default=None, type=click.Choice(["invi", "per-frame"]))
@click.option("--postprocess", default=None, type=click.Choice(["on", "off"]))
@click.option("--dump-frames", default=None,
              help="Also dump output frames as lossless images here.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Config override, repeatable.")
@click.option("--server", default=None, help="Edit-service URL (default: in-process).")
def run(video, boxes, control_dir, control_kind, prompt, config_path, out,
        mode, postprocess, dump_frames, overrides, server):
    """Run the edit pipeline over a video."""
    parsed = {}
    for item in overrides:
        if "=" not in item:
            raise click.ClickException(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        parsed[key.strip()] = value.strip()
    manifest = RunManifest(
        video=video, boxes=boxes, out=out, prompt=prompt,
        control_dir=control_dir, control_kind=control_kind,
        config_path=config_path,
        mode=None if mode is None else mode.replace("-", "_"),
        postprocess=None if postprocess is None else postprocess == "on",
        dump_frames=dump_frames, overrides=parsed)
    if server is None:
        # In-process runs share this filesystem, so fail fast on missing
        # inputs; remote servers validate against their own filesystem.
        try:
            validate_manifest(manifest)
        except ManifestError as exc:
            raise click.ClickException(str(exc))
    body = _post(server, "/run", {
        "video": manifest.video, "boxes": manifest.boxes, "out": manifest.out,
        "prompt": manifest.prompt, "control_dir": manifest.control_dir,
        "control_kind": manifest.control_kind, "config": manifest.config_path,
        "mode": manifest.mode, "postprocess": manifest.postprocess,
        "dump_frames": manifest.dump_frames, "overrides": manifest.overrides})
    click.echo(json.dumps(body, indent=2))


@main.command("eval")
@click.option("--original", required=True, help="Source video or frame directory.")
@click.option("--edited", required=True, help="Edited video or frame directory.")
@click.option("--mask", default=None,
              help="Per-frame background masks (video or frame directory).")
@click.option("--prompt", default=None, help="Edit prompt for alignment scoring.")
@click.option("--config", "config_path", default=None, help="Config file path.")
@click.option("--server", default=None, help="Edit-service URL (default: in-process).")
def eval_cmd(original, edited, mask, prompt, config_path, server):
    """Score an edited video against its source."""
    body = _post(server, "/eval", {
        "original": original, "edited": edited, "mask": mask,
        "prompt": prompt, "config": config_path, "overrides": {}})
    click.echo(body["text"])


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the edit service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
