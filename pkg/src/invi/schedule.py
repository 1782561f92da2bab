"""Diffusion-process mathematics.

Noise schedules, the closed-form forward kernel, the deterministic reverse
update, and the inversion update that maps a clean latent to its noisy
trajectory by reusing the model's own noise prediction instead of sampled
Gaussian noise.

Conventions: timesteps are integers in ``[0, T]`` where ``t = 0`` is the
clean latent. Schedule arrays ``beta``, ``alpha`` and ``alpha_bar`` have
length ``T`` and store the value for timestep ``t`` at index ``t - 1``;
the cumulative signal level at ``t = 0`` is exactly 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SPACINGS = ("linear", "scaled_linear")


@dataclass
class NoiseSchedule:
    """Per-step variances and their cumulative signal levels for T steps."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal level at timestep t, with the t=0 boundary = 1."""
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def inference_timesteps(self, steps: int) -> list[int]:
        """Uniform-stride subset of 1..T used for inversion and sampling.

        Returned ascending; always ends at T. ``steps`` may not exceed T.
        """
        if not 1 <= steps <= self.T:
            raise ValueError(f"steps must be in [1, {self.T}], got {steps}")
        stride = self.T // steps
        return [self.T - stride * k for k in range(steps - 1, -1, -1)]

    def validate(self) -> None:
        if self.T < 1:
            raise ValueError("schedule must have at least one step")
        for name, arr in (("beta", self.beta), ("alpha", self.alpha),
                          ("alpha_bar", self.alpha_bar)):
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have shape ({self.T},)")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ValueError("all beta values must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")


@dataclass
class LatentFrame:
    """One 4-channel latent plane tagged with its frame index and timestep."""

    data: np.ndarray
    frame_index: int = 1
    timestep: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"latent must be (H, W, C), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent contains non-finite entries")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def with_data(self, data: np.ndarray, timestep: int) -> "LatentFrame":
        return LatentFrame(data, frame_index=self.frame_index, timestep=timestep)


@dataclass
class TrajectoryRow:
    """Inverted latents for one video frame: the clean input plus one latent
    per inference timestep."""

    frame_index: int
    x0: LatentFrame
    steps: dict[int, LatentFrame] = field(default_factory=dict)

    @property
    def timesteps(self) -> list[int]:
        return sorted(self.steps)

    def at(self, t: int) -> LatentFrame:
        if t == 0:
            return self.x0
        return self.steps[t]


@dataclass
class LatentTrajectory:
    """Per-frame inverted trajectories sharing one timestep grid and shape."""

    rows: list[TrajectoryRow]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("trajectory must cover at least one frame")
        grids = {tuple(r.timesteps) for r in self.rows}
        shapes = {r.x0.shape for r in self.rows}
        if len(grids) != 1 or len(shapes) != 1:
            raise ValueError("all frames must share one timestep grid and shape")

    def row(self, frame_index: int) -> TrajectoryRow:
        return self.rows[frame_index - 1]

    @property
    def n_frames(self) -> int:
        return len(self.rows)


def make_schedule(T: int, beta_start: float = 0.00085, beta_end: float = 0.012,
                  spacing: str = "scaled_linear") -> NoiseSchedule:
    """Build a noise schedule of T steps.

    ``linear`` spaces the variances evenly; ``scaled_linear`` spaces their
    square roots evenly (the spacing used by latent-diffusion checkpoints).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    if spacing == "linear":
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif spacing == "scaled_linear":
        beta = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T,
                           dtype=np.float64) ** 2
    else:
        raise ValueError(f"unknown spacing {spacing!r}; expected one of {SPACINGS}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sched = NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)
    sched.validate()
    return sched


def _check_shapes(a: LatentFrame, b: LatentFrame, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_sample(x0: LatentFrame, t: int, noise: LatentFrame,
                   sched: NoiseSchedule) -> LatentFrame:
    """Closed-form forward diffusion: scale the clean latent by the cumulative
    signal level and add the matching amount of the given noise."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t must be in [1, {sched.T}], got {t}")
    _check_shapes(x0, noise, "forward_sample")
    a_bar = sched.alpha_bar_at(t)
    data = np.sqrt(a_bar) * x0.data + np.sqrt(1.0 - a_bar) * noise.data
    return x0.with_data(data, timestep=t)


def ddim_step(z_t: LatentFrame, noise_pred: LatentFrame, t: int, t_prev: int,
              sched: NoiseSchedule) -> LatentFrame:
    """Deterministic reverse update from timestep t down to t_prev.

    Reconstructs the clean-latent estimate from the noise prediction, then
    re-noises it to the target level; with the same noise prediction this is
    the exact inverse of :func:`ddim_invert_step`.
    """
    if not (t > t_prev >= 0):
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    _check_shapes(z_t, noise_pred, "ddim_step")
    a_t = sched.alpha_bar_at(t)
    a_prev = sched.alpha_bar_at(t_prev)
    x0_est = (z_t.data - np.sqrt(1.0 - a_t) * noise_pred.data) / np.sqrt(a_t)
    data = np.sqrt(a_prev) * x0_est + np.sqrt(1.0 - a_prev) * noise_pred.data
    return z_t.with_data(data, timestep=t_prev)


def ddim_invert_step(z_t: LatentFrame, noise_pred: LatentFrame, t: int,
                     t_next: int, sched: NoiseSchedule) -> LatentFrame:
    """Deterministic inversion update from timestep t up to t_next.

    Same algebra as :func:`ddim_step` run in the ascending direction, with
    the noise prediction evaluated at the lower timestep.
    """
    if not (t_next > t >= 0):
        raise ValueError(f"need t_next > t >= 0, got t={t}, t_next={t_next}")
    _check_shapes(z_t, noise_pred, "ddim_invert_step")
    a_t = sched.alpha_bar_at(t)
    a_next = sched.alpha_bar_at(t_next)
    x0_est = (z_t.data - np.sqrt(1.0 - a_t) * noise_pred.data) / np.sqrt(a_t)
    data = np.sqrt(a_next) * x0_est + np.sqrt(1.0 - a_next) * noise_pred.data
    return z_t.with_data(data, timestep=t_next)


def ddim_invert_trajectory(x0: LatentFrame,
                           eps_fn: Callable[[LatentFrame], np.ndarray],
                           sched: NoiseSchedule,
                           timesteps: Sequence[int] | None = None) -> TrajectoryRow:
    """Invert a clean latent into its noisy trajectory.

    ``eps_fn`` is the denoiser's noise prediction for this frame as a
    function of the current latent (timestep comes from the latent's tag);
    the pipeline builds it from a denoiser handle and prompt. Returns one
    latent per inference timestep, ascending to T.
    """
    if x0.timestep != 0:
        raise ValueError(f"inversion input must be tagged t=0, got {x0.timestep}")
    grid = list(timesteps) if timesteps is not None else sched.inference_timesteps(sched.T)
    if not grid or sorted(grid) != grid or grid[0] < 1 or grid[-1] > sched.T:
        raise ValueError(f"timesteps must be ascending within [1, {sched.T}]")
    row = TrajectoryRow(frame_index=x0.frame_index, x0=x0)
    z = x0
    for t_next in grid:
        eps = z.with_data(np.asarray(eps_fn(z), dtype=np.float64), timestep=z.timestep)
        z = ddim_invert_step(z, eps, z.timestep, t_next, sched)
        row.steps[t_next] = z
    return row
