"""Variance-exploding diffusion: Karras-spaced noise levels, forward noising,
denoiser interface and ancestral sampling.
"""

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, Rng, Shape
from cascadesr.models import NoiseSchedule
from cascadesr.utils import progress


def sigma_at(schedule: NoiseSchedule, step: int) -> float:
    """Noise level of `step`, from sigma_max at 0 down to sigma_min at T-1."""
    if not 0 <= step < schedule.num_steps:
        raise ConfigurationError(
            f"step {step} out of range 0..{schedule.num_steps - 1}"
        )
    inv_rho = 1.0 / schedule.rho
    start = schedule.sigma_max**inv_rho
    end = schedule.sigma_min**inv_rho
    ramp = step / (schedule.num_steps - 1)
    return float((start + ramp * (end - start)) ** schedule.rho)


def sigmas(schedule: NoiseSchedule) -> np.ndarray:
    """All noise levels followed by a terminal 0."""
    levels = [sigma_at(schedule, i) for i in range(schedule.num_steps)]
    return np.array(levels + [0.0])


def add_noise(x0: Field, sigma: float, rng: Rng) -> Field:
    """x0 + sigma * eps, eps ~ N(0, I)."""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return x0
    return Field(x0.data + sigma * rng.normal(x0.shape))


@runtime_checkable
class Denoiser(Protocol):
    """Estimate of E[x0 | x_t] at noise level sigma.

    ``cond_shapes`` lists the shapes of the conditioning fields the denoiser
    accepts, in order; ``cost`` is the relative price of one evaluation.
    """

    trainable: bool
    cond_shapes: Sequence[Shape]

    @property
    def cost(self) -> float: ...

    def evaluate(
        self, xt: Field, sigma: float, cond: Optional[Sequence[Field]] = None
    ) -> Field: ...


def check_conditioning(denoiser: Denoiser, cond: Optional[Sequence[Field]]):
    cond = list(cond or [])
    expected = [tuple(s) for s in denoiser.cond_shapes]
    got = [c.shape for c in cond]
    if got != expected:
        raise ShapeError(f"Conditioning shapes {got} do not match declared {expected}")
    return cond


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Isotropic Gaussian N(mean, variance·I)."""

    mean: Field
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError(f"Prior variance must be positive, got {self.variance}")


def denoise_coefficients(prior: GaussianPrior, sigma: float):
    """(a, b) with E[x0 | xt] = a·xt + b·mean."""
    total = prior.variance + sigma**2
    return prior.variance / total, sigma**2 / total


def gaussian_denoise(prior: GaussianPrior, xt: Field, sigma: float) -> Field:
    """Conjugate posterior mean (s0²·xt + σ²·μ) / (s0² + σ²)."""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be non-negative, got {sigma}")
    if xt.shape != prior.mean.shape:
        raise ShapeError(f"xt has shape {xt.shape}, prior mean {prior.mean.shape}")
    a, b = denoise_coefficients(prior, sigma)
    return Field(a * xt.data + b * prior.mean.data)


class GaussianDenoiser:
    """Analytic denoiser of a GaussianPrior; conditioning fields are accepted and ignored."""

    trainable = False

    def __init__(self, prior: GaussianPrior, cond_shapes: Sequence[Shape] = ()):
        self.prior = prior
        self.cond_shapes = [tuple(s) for s in cond_shapes]

    @property
    def cost(self) -> float:
        return float(self.prior.mean.size)

    def evaluate(
        self, xt: Field, sigma: float, cond: Optional[Sequence[Field]] = None
    ) -> Field:
        check_conditioning(self, cond)
        return gaussian_denoise(self.prior, xt, sigma)

    def __repr__(self) -> str:
        return f"GaussianDenoiser(shape={self.prior.mean.shape}, variance={self.prior.variance})"


def ancestral_sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    shape: Shape,
    cond: Optional[Sequence[Field]],
    rng: Rng,
    show_progress: bool = False,
) -> Field:
    """Denoise then re-noise with fresh noise down the schedule.

    Starts from sigma_max·eps; the last step returns the denoised estimate.
    """

    levels = sigmas(schedule)
    x = Field(levels[0] * rng.normal(shape))
    x0_hat = x
    for i in progress(range(schedule.num_steps), "ancestral", show_progress):
        x0_hat = denoiser.evaluate(x, float(levels[i]), cond)
        if x0_hat.shape != x.shape:
            raise ShapeError(
                f"Denoiser returned shape {x0_hat.shape} for input {x.shape}"
            )
        if levels[i + 1] > 0:
            x = Field(x0_hat.data + levels[i + 1] * rng.normal(shape))
    return x0_hat
