"""Posterior samplers for super-resolution: DiffPIR, DPS with an analytic
prior, and the coarse-to-fine cascade over Laplacian pyramid levels.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from cascadesr.diffusion import (
    Denoiser,
    GaussianPrior,
    denoise_coefficients,
    gaussian_denoise,
    sigmas,
)
from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, Rng
from cascadesr.models import SamplerConfig
from cascadesr.operators import (
    Measurement,
    make_down2,
    make_down2_chain,
    prox_data_consistency,
)
from cascadesr.pyramid import LaplacianPyramid, reconstruct, up
from cascadesr.utils import progress

NOISE_FLOOR = 1e-3
GUIDANCE_EPS = 1e-12


def data_weight(cfg: SamplerConfig, sigma_n: float, sigma_t: float) -> float:
    """tau_t = lam * max(sigma_n, 1e-3)^2 / sigma_t^2."""
    return cfg.lam * max(sigma_n, NOISE_FLOOR) ** 2 / sigma_t**2


def diffpir_solve(
    m: Measurement,
    denoiser: Denoiser,
    cfg: SamplerConfig = SamplerConfig(),
    cond: Optional[Sequence[Field]] = None,
    steps: Optional[int] = None,
    rng: Optional[Rng] = None,
    show_progress: bool = False,
) -> Field:
    """Alternate denoising and proximal data consistency down the schedule.

    Parameters
    ----------
    m : Measurement
        y, the bound forward operator and the noise level sigma_n.
    denoiser : Denoiser
        Estimates x0 at the resolution of ``m.x_shape``.
    cfg : SamplerConfig
        Schedule, data weight ``lam`` and CG settings.
    cond : list of Field, default=None
        Conditioning passed to every denoiser call.
    steps : int, default=None
        Overrides ``cfg.total_steps``.
    rng : Rng, default=None
        Noise stream; ``Rng(cfg.seed)`` when omitted.

    Returns
    -------
    x : Field
        The last data-consistent estimate.
    """

    schedule = cfg.schedule_for(steps or cfg.total_steps)
    rng = rng if rng is not None else Rng(cfg.seed)
    levels = sigmas(schedule)
    shape = m.x_shape

    x = Field(levels[0] * rng.normal(shape))
    estimate = x
    for i in progress(range(schedule.num_steps), "diffpir", show_progress):
        x0_hat = denoiser.evaluate(x, float(levels[i]), cond)
        if x0_hat.shape != shape:
            raise ShapeError(f"Denoiser returned shape {x0_hat.shape}, expected {shape}")
        tau = data_weight(cfg, m.noise_sigma, float(levels[i]))
        estimate = prox_data_consistency(
            m, x0_hat, tau, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter
        )
        if levels[i + 1] > 0:
            x = Field(estimate.data + levels[i + 1] * rng.normal(shape))
    return estimate


## DPS
def dps_guidance_gradient(
    m: Measurement, prior: GaussianPrior, xt: Field, sigma: float
) -> Tuple[np.ndarray, float]:
    """Gradient of ||y - H x0_hat(xt)||^2 with respect to xt, and the residual norm.

    x0_hat = a*xt + b*mean is affine, so the gradient is -2a * H^T (y - H x0_hat).
    """

    a, b = denoise_coefficients(prior, sigma)
    x0_hat = a * xt.data + b * prior.mean.data
    residual = m.y.data - m.op.apply_array(x0_hat)
    gradient = -2.0 * a * m.op.adjoint_array(residual)
    return gradient, float(np.linalg.norm(residual))


def dps_solve(
    m: Measurement,
    prior: GaussianPrior,
    cfg: SamplerConfig = SamplerConfig(),
    rng: Optional[Rng] = None,
    show_progress: bool = False,
) -> Field:
    """Ancestral sampling with the analytic denoiser, steered each step by
    ``-zeta/||y - H x0_hat|| * grad ||y - H x0_hat||^2``.
    """

    if prior.mean.shape != m.x_shape:
        raise ShapeError(
            f"Prior mean has shape {prior.mean.shape}, operator expects {m.x_shape}"
        )
    schedule = cfg.schedule
    rng = rng if rng is not None else Rng(cfg.seed)
    levels = sigmas(schedule)
    shape = m.x_shape

    x = Field(levels[0] * rng.normal(shape))
    for i in progress(range(schedule.num_steps), "dps", show_progress):
        sigma = float(levels[i])
        x0_hat = gaussian_denoise(prior, x, sigma)
        step = x0_hat.data
        if levels[i + 1] > 0:
            step = step + levels[i + 1] * rng.normal(shape)
        if cfg.zeta > 0:
            gradient, residual_norm = dps_guidance_gradient(m, prior, x, sigma)
            if residual_norm >= GUIDANCE_EPS:
                step = step - (cfg.zeta / residual_norm) * gradient
        x = Field(step)
    return x


## Cascade
@dataclass
class CascadeSpec:
    """Per-level denoisers of an L-level cascade, ordered coarse to fine.

    ``denoisers[0]`` models x^(L) unconditionally; every finer one takes the
    upsampled coarser reconstruction as its single conditioning field.
    """

    num_levels: int
    denoisers: List[Denoiser]
    factor: int

    def __post_init__(self):
        if self.num_levels < 2:
            raise ConfigurationError(
                f"A cascade needs at least 2 levels, got {self.num_levels}"
            )
        if len(self.denoisers) != self.num_levels:
            raise ConfigurationError(
                f"{self.num_levels} levels need {self.num_levels} denoisers, "
                f"got {len(self.denoisers)}"
            )
        if self.factor < 2 or self.factor & (self.factor - 1):
            raise ConfigurationError(
                f"Super-resolution factor must be a power of two ≥ 2, got {self.factor}"
            )
        if len(self.denoiser(self.num_levels).cond_shapes) != 0:
            raise ConfigurationError("The coarsest level denoiser takes no conditioning")
        for i in range(1, self.num_levels):
            if len(self.denoiser(i).cond_shapes) != 1:
                raise ConfigurationError(
                    f"Level {i} denoiser must take exactly one conditioning field"
                )

    def denoiser(self, level: int) -> Denoiser:
        if not 1 <= level <= self.num_levels:
            raise ConfigurationError(f"Level {level} out of range 1..{self.num_levels}")
        return self.denoisers[self.num_levels - level]

    def __repr__(self) -> str:
        return f"CascadeSpec(num_levels={self.num_levels}, factor={self.factor})"


def level_operator_count(factor: int, num_levels: int, level: int) -> int:
    """Number of Down2 factors mapping level `level` onto y: log2(k) - (level - 1)."""
    if not 1 <= level <= num_levels:
        raise ConfigurationError(f"Level {level} out of range 1..{num_levels}")
    count = int(round(math.log2(factor))) - (level - 1)
    if count < 0:
        raise ConfigurationError(
            f"Level {level} is coarser than the measurement for factor {factor}"
        )
    return count


def split_steps(total_steps: int, num_levels: int) -> List[int]:
    """Steps per level, coarsest first; the remainder goes to level 1."""
    share = total_steps // num_levels
    counts = [share] * num_levels
    counts[-1] += total_steps - share * num_levels
    return counts


def cascade_solve(
    y: Field,
    spec: CascadeSpec,
    cfg: SamplerConfig = SamplerConfig(),
    sigma_n: float = 0.0,
    rng: Optional[Rng] = None,
    show_progress: bool = False,
) -> Tuple[Field, LaplacianPyramid]:
    """Sample the pyramid coarse to fine, each level under its own operator.

    Level i solves for its band v with the coarser reconstruction u frozen:
    ``||(y - A_i u) - A_i v||^2``, A_i a chain of Down2. Returns the
    reconstruction of the sampled pyramid and the pyramid itself.
    """

    L = spec.num_levels
    if cfg.total_steps < 2 * L:
        raise ConfigurationError(
            f"total_steps {cfg.total_steps} must be at least {2 * L} for {L} levels"
        )
    counts = [level_operator_count(spec.factor, L, i) for i in range(L, 0, -1)]
    base = (y.height * spec.factor, y.width * spec.factor, y.channels)
    rng = rng if rng is not None else Rng(cfg.seed)

    bands: List[Field] = []
    coarse: Optional[Field] = None
    for (level, count), steps in zip(
        zip(range(L, 0, -1), counts), split_steps(cfg.total_steps, L)
    ):
        scale = 2 ** (level - 1)
        shape = (base[0] // scale, base[1] // scale, base[2])
        op = make_down2_chain(count, shape)
        if coarse is None:
            u = None
            m = Measurement(y, op, sigma_n)
        else:
            u = up(coarse)
            m = Measurement(Field(y.data - op.apply_array(u.data)), op, sigma_n)
        band = diffpir_solve(
            m,
            spec.denoiser(level),
            cfg,
            cond=None if u is None else [u],
            steps=steps,
            rng=rng.derive(level),
            show_progress=show_progress,
        )
        bands.append(band)
        coarse = band if u is None else Field(band.data + u.data)

    pyramid = LaplacianPyramid(levels=bands)
    return reconstruct(pyramid), pyramid


def level1_solve(
    y: Field,
    denoiser: Denoiser,
    cfg: SamplerConfig = SamplerConfig(),
    sigma_n: float = 0.0,
    rng: Optional[Rng] = None,
    show_progress: bool = False,
) -> Tuple[Field, LaplacianPyramid]:
    """2x super-resolution with the finest-level model alone.

    The coarse reconstruction is taken to be y itself; only x^(1) is sampled,
    conditioned on up(y).
    """

    u = up(y)
    op = make_down2(u.shape)
    m = Measurement(Field(y.data - op.apply_array(u.data)), op, sigma_n)
    band = diffpir_solve(
        m,
        denoiser,
        cfg,
        cond=[u],
        rng=(rng if rng is not None else Rng(cfg.seed)).derive(1),
        show_progress=show_progress,
    )
    pyramid = LaplacianPyramid(levels=[y, band])
    return reconstruct(pyramid), pyramid


## Cost accounting
def flop_estimate(
    model: Union[CascadeSpec, Denoiser, Sequence[float]], total_steps: int
) -> float:
    """Total denoiser cost of one solve: sum over levels of steps * cost.

    `model` is a cascade, a single denoiser, or per-level costs coarse to fine.
    """

    if isinstance(model, CascadeSpec):
        costs = [model.denoiser(i).cost for i in range(model.num_levels, 0, -1)]
    elif hasattr(model, "cost"):
        return float(total_steps * model.cost)
    else:
        costs = [float(c) for c in model]
    steps = split_steps(total_steps, len(costs))
    return float(sum(n * c for n, c in zip(steps, costs)))
