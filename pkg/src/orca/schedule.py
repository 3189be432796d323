"""Forward-noising machinery: schedules, latents and the closed-form noising step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ContractViolation


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal-retention coefficients.

    ``alphas`` has length T with alphas[i] belonging to timestep i+1.
    ``bar_alphas`` has length T+1, ``bar_alphas[0] == 1`` exactly, and
    ``bar_alphas[t]`` is the cumulative product of the first t alphas, so
    t=0 denotes a clean latent with no added noise.
    """

    alphas: np.ndarray
    bar_alphas: np.ndarray = field(init=False)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.size == 0:
            raise ContractViolation("alphas must be a non-empty 1-D array")
        if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
            raise ContractViolation("every alpha must lie in (0, 1]")
        object.__setattr__(self, "alphas", alphas)
        bar = np.concatenate([[1.0], np.cumprod(alphas)])
        object.__setattr__(self, "bar_alphas", bar)

    @property
    def num_timesteps(self) -> int:
        return self.alphas.size


def make_linear_schedule(num_timesteps: int = 1000,
                         beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas, the conventional choice for pixel/latent denoisers."""
    betas = np.linspace(beta_start, beta_end, num_timesteps, dtype=np.float64)
    return NoiseSchedule(alphas=1.0 - betas)


@dataclass
class LatentTensor:
    """A (C,H,W) latent with a tag for the space it lives in."""

    values: torch.Tensor
    space_tag: str = "pixel"

    def __post_init__(self):
        if self.space_tag not in ("pixel", "latent"):
            raise ContractViolation(f"unknown space_tag {self.space_tag!r}")
        if self.values.ndim != 3:
            raise ContractViolation(f"latent must be (C,H,W), got shape {tuple(self.values.shape)}")

    @property
    def shape(self):
        return tuple(self.values.shape)


def noising_coefficients(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """(signal, noise) coefficients sqrt(bar_alpha_t) and sqrt(1 - bar_alpha_t)."""
    if not 0 <= t <= schedule.num_timesteps:
        raise IndexError(f"timestep {t} outside [0, {schedule.num_timesteps}]")
    bar = float(schedule.bar_alphas[t])
    return bar ** 0.5, (1.0 - bar) ** 0.5


def noise_latent(z0: LatentTensor, t: int, eps: LatentTensor,
                 schedule: NoiseSchedule) -> LatentTensor:
    """Closed-form forward noising of a clean latent.

    Returns sqrt(bar_alpha_t) * z0 + sqrt(1 - bar_alpha_t) * eps elementwise.
    At t=0 the result equals z0 bitwise (noise coefficient is exactly 0).
    """
    if tuple(eps.values.shape) != tuple(z0.values.shape):
        raise ContractViolation(
            f"eps shape {tuple(eps.values.shape)} != z0 shape {tuple(z0.values.shape)}")
    if not 0 <= t <= schedule.num_timesteps:
        raise IndexError(f"timestep {t} outside [0, {schedule.num_timesteps}]")
    if t == 0:
        return LatentTensor(values=z0.values.clone(), space_tag=z0.space_tag)
    c_signal, c_noise = noising_coefficients(schedule, t)
    zt = z0.values * c_signal + eps.values * c_noise
    return LatentTensor(values=zt, space_tag=z0.space_tag)


def noise_batch(z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                schedule: NoiseSchedule) -> torch.Tensor:
    """Batched noising with per-sample integer timesteps (training-fixture path)."""
    bar = torch.from_numpy(schedule.bar_alphas).to(z0.dtype)[t]
    while bar.ndim < z0.ndim:
        bar = bar.unsqueeze(-1)
    return bar.sqrt() * z0 + (1.0 - bar).sqrt() * eps
