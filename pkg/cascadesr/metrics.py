"""PSNR and SSIM on Fields, and directory-level evaluation."""

import glob
import math
import os

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, PathLike, load_field
from cascadesr.models import MetricReport, MetricRow

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _plane(f: Field) -> np.ndarray:
    """The compared image: the real plane, or the magnitude of a complex field."""
    if f.channels == 1:
        return f.data[:, :, 0]
    return f.magnitude()


def _planes(x: Field, ref: Field):
    if x.shape != ref.shape:
        raise ShapeError(f"Cannot compare {x.shape} with reference {ref.shape}")
    image, reference = _plane(x), _plane(ref)
    peak = float(np.max(np.abs(reference)))
    if peak == 0:
        raise ConfigurationError("Reference is all zero; peak value is undefined")
    return image, reference, peak


def psnr(x: Field, ref: Field) -> float:
    """10*log10(peak^2 / MSE) with peak = max |ref|; +inf for identical images."""
    image, reference, peak = _planes(x, ref)
    mse = mean_squared_error(reference, image)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / mse))


def ssim(x: Field, ref: Field) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows (std 1.5), range = peak of ref."""
    image, reference, peak = _planes(x, ref)
    if min(image.shape) < SSIM_WINDOW:
        raise ConfigurationError(
            f"SSIM needs both dims ≥ {SSIM_WINDOW}, got {image.shape}"
        )
    value = structural_similarity(
        reference,
        image,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=peak,
    )
    return float(np.clip(value, -1.0, 1.0))


def evaluate_pairs(pred_dir: PathLike, ref_dir: PathLike, algo=None) -> MetricReport:
    """Score every ``*.fld`` of `ref_dir` against the same name in `pred_dir`."""
    if not os.path.isdir(ref_dir):
        raise ConfigurationError(f"Reference directory doesn't exist: {ref_dir}")
    rows = []
    for ref_path in sorted(glob.glob(os.path.join(ref_dir, "*.fld"))):
        name = os.path.basename(ref_path)
        pred_path = os.path.join(pred_dir, name)
        if not os.path.isfile(pred_path):
            raise ConfigurationError(f"Missing prediction for {name} in {pred_dir}")
        prediction, reference = load_field(pred_path), load_field(ref_path)
        rows.append(
            MetricRow(
                filename=name,
                psnr_db=psnr(prediction, reference),
                ssim=ssim(prediction, reference),
                algo=algo,
            )
        )
    return MetricReport(rows=rows)
