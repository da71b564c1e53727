"""Synthetic data, per-level training sets, model loading and the
experiment/benchmark runners behind the CLI.
"""

import glob
import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cascadesr.diffusion import GaussianDenoiser, GaussianPrior
from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, PathLike, Rng, load_field, save_field
from cascadesr.metrics import psnr, ssim
from cascadesr.models import (
    BenchReport,
    BenchRow,
    ExperimentConfig,
    MetricReport,
    MetricRow,
    PhantomKind,
    PhantomSpec,
    SamplerConfig,
)
from cascadesr.networks import MlpDenoiser, load_checkpoint
from cascadesr.operators import Measurement, make_sr_operator
from cascadesr.posterior import (
    CascadeSpec,
    cascade_solve,
    diffpir_solve,
    dps_solve,
    flop_estimate,
    level1_solve,
)
from cascadesr.pyramid import decompose, partial_reconstruct, up
from cascadesr.utils import emit, progress, write_csv


## Phantoms
def _texture(rng: Rng, size: int, exponent: float) -> np.ndarray:
    """Gaussian random field with power spectrum (1 + |k|)^(-exponent), peak 1."""
    noise = rng.normal((size, size))
    ky = np.fft.fftfreq(size) * size
    kx = np.fft.rfftfreq(size) * size
    radius = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    amplitude = (1.0 + radius) ** (-exponent / 2.0)
    amplitude[0, 0] = 0.0
    image = np.fft.irfft2(np.fft.rfft2(noise) * amplitude, s=(size, size))
    return image / np.max(np.abs(image))


def _ellipses(rng: Rng, size: int, max_ellipses: int) -> np.ndarray:
    """Filled, rotated ellipses summed over a zero background, clipped to [0, 1]."""
    image = np.zeros((size, size))
    coords = np.arange(size) + 0.5
    Y, X = np.meshgrid(coords, coords, indexing="ij")
    for _ in range(int(rng.integers(1, max_ellipses + 1))):
        cy, cx = rng.uniform(2, 0.2 * size, 0.8 * size)
        ry, rx = rng.uniform(2, 0.05 * size, 0.35 * size)
        angle = float(rng.uniform(None, 0.0, np.pi))
        intensity = float(rng.uniform(None, 0.2, 1.0))
        cos, sin = np.cos(angle), np.sin(angle)
        u = (X - cx) * cos + (Y - cy) * sin
        v = -(X - cx) * sin + (Y - cy) * cos
        image[(u / rx) ** 2 + (v / ry) ** 2 <= 1.0] += intensity
    return np.clip(image, 0.0, 1.0)


def generate_phantoms(spec: PhantomSpec) -> List[Field]:
    """`spec.count` phantoms; image j only depends on (seed, j)."""
    root = Rng(spec.seed)
    phantoms = []
    for index in range(spec.count):
        planes = []
        for channel in range(spec.channels):
            rng = root.derive(index, channel)
            if spec.kind == PhantomKind.TEXTURE:
                planes.append(_texture(rng, spec.size, spec.spectral_exponent))
            else:
                planes.append(_ellipses(rng, spec.size, spec.max_ellipses))
        phantoms.append(Field(np.stack(planes, axis=2)))
    return phantoms


def make_sr_task(x: Field, factor: int, sigma_n: float, rng: Rng) -> Measurement:
    """y = H_k(x) + sigma_n * eps."""
    op = make_sr_operator(factor)
    if x.height % factor or x.width % factor:
        raise ShapeError(f"Shape {x.shape} is not divisible by factor {factor}")
    if sigma_n < 0:
        raise ConfigurationError(f"sigma_n must be non-negative, got {sigma_n}")
    op = op.bind(x.shape)
    y = op.apply_array(x.data)
    if sigma_n > 0:
        y = y + sigma_n * rng.normal(y.shape)
    return Measurement(Field(y), op, sigma_n)


## Training sets
def build_level_datasets(
    images: Sequence[Field], num_levels: int
) -> Dict[int, List[Tuple[Field, List[Field]]]]:
    """Per-level (target, conditioning) pairs with ground-truth coarse levels.

    Level L pairs carry no conditioning; level i < L is conditioned on the
    upsampled reconstruction of levels i+1..L.
    """

    datasets: Dict[int, List[Tuple[Field, List[Field]]]] = {
        i: [] for i in range(1, num_levels + 1)
    }
    for image in images:
        pyramid = decompose(image, num_levels)
        datasets[num_levels].append((pyramid.level(num_levels), []))
        for i in range(1, num_levels):
            cond = up(partial_reconstruct(pyramid, i + 1))
            datasets[i].append((pyramid.level(i), [cond]))
    return datasets


def fit_gaussian_prior(images: Sequence[Field]) -> GaussianPrior:
    """Mean image and pixel-pooled variance of `images`."""
    if len(images) == 0:
        raise ConfigurationError("Cannot fit a prior to an empty image set")
    stack = np.stack([image.data for image in images])
    variance = max(float(np.mean(np.var(stack, axis=0))), 1e-12)
    return GaussianPrior(mean=Field(stack.mean(axis=0)), variance=variance)


## Files
def list_fields(directory: PathLike) -> List[str]:
    if not os.path.isdir(directory):
        raise ConfigurationError(f"Data directory doesn't exist: {directory}")
    return sorted(glob.glob(os.path.join(directory, "*.fld")))


def load_fields(directory: PathLike, count: Optional[int] = None):
    """[(filename, Field)] for the ``*.fld`` files of `directory`, sorted by name."""
    paths = list_fields(directory)
    if count is not None:
        paths = paths[:count]
    return [(os.path.basename(path), load_field(path)) for path in paths]


def save_fields(fields: Sequence[Field], directory: PathLike, prefix: str = "img"):
    os.makedirs(directory, exist_ok=True)
    width = max(4, len(str(len(fields))))
    paths = []
    for index, f in enumerate(fields):
        path = os.path.join(directory, f"{prefix}_{index:0{width}d}.fld")
        save_field(f, path)
        paths.append(path)
    return paths


def cascade_model_path(models_dir: PathLike, num_levels: int, level: int) -> str:
    return os.path.join(models_dir, f"L{num_levels}_level{level}.ckpt")


def single_model_path(models_dir: PathLike) -> str:
    return os.path.join(models_dir, "single.ckpt")


class ModelStore:
    """Loads and caches the checkpoints and fitted prior a run needs."""

    def __init__(self, models_dir: PathLike, train_dir: Optional[PathLike] = None):
        self.models_dir = models_dir
        self.train_dir = train_dir
        self._cache: Dict[str, MlpDenoiser] = {}
        self._prior: Optional[GaussianPrior] = None

    def _load(self, path: str) -> MlpDenoiser:
        if path not in self._cache:
            if not os.path.isfile(path):
                raise ConfigurationError(f"Model checkpoint doesn't exist: {path}")
            model, _ = load_checkpoint(path)
            self._cache[path] = model
        return self._cache[path]

    def single(self) -> MlpDenoiser:
        return self._load(single_model_path(self.models_dir))

    def cascade(self, num_levels: int, factor: int) -> CascadeSpec:
        denoisers = [
            self._load(cascade_model_path(self.models_dir, num_levels, i))
            for i in range(num_levels, 0, -1)
        ]
        return CascadeSpec(num_levels=num_levels, denoisers=denoisers, factor=factor)

    def level1(self) -> MlpDenoiser:
        return self._load(cascade_model_path(self.models_dir, 2, 1))

    def prior(self) -> GaussianPrior:
        if self._prior is None:
            if self.train_dir is None:
                raise ConfigurationError("DPS needs training data to fit its prior")
            images = [f for _, f in load_fields(self.train_dir)]
            self._prior = fit_gaussian_prior(images)
        return self._prior

    def cost_model(self, algo: str, factor: int):
        """What flop_estimate should price for `algo`."""
        if algo == "diffpir":
            return self.single()
        if algo == "dps":
            return GaussianDenoiser(self.prior())
        if algo == "level1":
            return self.level1()
        return self.cascade(int(algo[-1]), factor)


def solve(
    algo: str,
    m: Measurement,
    store: ModelStore,
    cfg: SamplerConfig,
    rng: Rng,
    show_progress: bool = False,
) -> Field:
    """Run one algorithm on one measurement; `m.op` must be the Down2 chain of the task."""
    factor = m.x_shape[0] // m.y.height
    if algo == "diffpir":
        return diffpir_solve(
            m, store.single(), cfg, rng=rng, show_progress=show_progress
        )
    if algo == "dps":
        return dps_solve(m, store.prior(), cfg, rng=rng, show_progress=show_progress)
    if algo == "level1":
        if factor != 2:
            raise ConfigurationError(f"level1 solves factor 2 only, got {factor}")
        x, _ = level1_solve(
            m.y,
            store.level1(),
            cfg,
            m.noise_sigma,
            rng=rng,
            show_progress=show_progress,
        )
        return x
    if algo in ("cascade2", "cascade3"):
        spec = store.cascade(int(algo[-1]), factor)
        x, _ = cascade_solve(
            m.y, spec, cfg, m.noise_sigma, rng=rng, show_progress=show_progress
        )
        return x
    raise ConfigurationError(f"Unknown algorithm {algo!r}")


## Experiments
def run_experiment(
    cfg: ExperimentConfig, to_print: bool = False, show_progress: bool = False
) -> MetricReport:
    """Solve every test image with every algorithm and score it.

    Writes ``metrics.csv``, ``timing.csv`` and ``{algo}/{name}`` predictions
    under ``cfg.output_dir``. Image j uses ``Rng(seed).derive(j)``: the
    measurement noise is shared by all algorithms, the sampler streams are not
    shared between images.
    """

    os.makedirs(cfg.output_dir, exist_ok=True)
    report = MetricReport()
    timings = []
    if cfg.algos:
        images = load_fields(cfg.test_dir, cfg.count)
        store = ModelStore(cfg.models_dir, cfg.train_dir)
        root = Rng(cfg.sampler.seed)
        tasks = [
            make_sr_task(x, cfg.task.factor, cfg.sigma_n, root.derive(j, 0))
            for j, (_, x) in enumerate(images)
        ]
        for algo in cfg.algos:
            algo_dir = os.path.join(cfg.output_dir, algo)
            os.makedirs(algo_dir, exist_ok=True)
            start = time.perf_counter()
            for j, ((name, x), m) in enumerate(
                progress(list(zip(images, tasks)), algo, show_progress)
            ):
                x_hat = solve(algo, m, store, cfg.sampler, root.derive(j, 1))
                save_field(x_hat, os.path.join(algo_dir, name))
                report.rows.append(
                    MetricRow(
                        filename=name,
                        psnr_db=psnr(x_hat, x),
                        ssim=ssim(x_hat, x),
                        algo=algo,
                    )
                )
            timings.append({"algo": algo, "seconds": time.perf_counter() - start})
            emit(
                f"[ 🟢 ] {algo}: {len(images)} images, "
                f"mean PSNR {report.mean_psnr(algo):.2f} dB",
                to_print,
            )

    report.to_csv(os.path.join(cfg.output_dir, "metrics.csv"))
    write_csv(
        pd.DataFrame(timings, columns=["algo", "seconds"]),
        os.path.join(cfg.output_dir, "timing.csv"),
    )
    return report


def benchmark(
    cfg: ExperimentConfig,
    repeats: int = 3,
    to_print: bool = False,
    show_progress: bool = False,
) -> BenchReport:
    """Estimated denoiser cost and median wall clock over `repeats` runs per algorithm."""
    if repeats < 1:
        raise ConfigurationError(f"repeats must be ≥ 1, got {repeats}")
    report = BenchReport()
    if not cfg.algos:
        return report
    images = load_fields(cfg.test_dir, cfg.count)
    store = ModelStore(cfg.models_dir, cfg.train_dir)
    root = Rng(cfg.sampler.seed)
    tasks = [
        make_sr_task(x, cfg.task.factor, cfg.sigma_n, root.derive(j, 0))
        for j, (_, x) in enumerate(images)
    ]
    for algo in cfg.algos:
        flops = flop_estimate(
            store.cost_model(algo, cfg.task.factor), cfg.sampler.total_steps
        )
        seconds = []
        for _ in progress(range(repeats), algo, show_progress):
            start = time.perf_counter()
            for j, m in enumerate(tasks):
                solve(algo, m, store, cfg.sampler, root.derive(j, 1))
            seconds.append(time.perf_counter() - start)
        row = BenchRow(
            algo=algo,
            flops=flops,
            median_seconds=float(np.median(seconds)),
            seconds=seconds,
        )
        report.rows.append(row)
        emit(f"[ 🟢 ] {algo}: {row.median_seconds:.3f} s median", to_print)
    return report
