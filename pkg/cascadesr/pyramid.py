"""Laplacian pyramid over Fields.

`down` blurs with a 5-tap binomial kernel and keeps even rows/columns; `up`
inserts zeros and blurs with twice the taps per axis. Both are separable and
are applied as small dense 1-D matrices built once per size, which makes their
adjoints exact transposes.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, PathLike, load_field, save_field


class Boundary(str, Enum):
    # whole-sample mirror: d c b | a b c d | c b a
    REFLECT = "reflect"


_NDIMAGE_MODE = {Boundary.REFLECT: "mirror"}


@dataclass(frozen=True)
class PyramidKernel:
    taps: Tuple[float, ...] = (1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16)
    boundary: Boundary = Boundary.REFLECT

    def __post_init__(self):
        taps = np.asarray(self.taps)
        if taps.size % 2 == 0 or not np.array_equal(taps, taps[::-1]):
            raise ConfigurationError(f"Kernel taps must be odd and symmetric: {self.taps}")
        if abs(taps.sum() - 1.0) > np.finfo(float).eps:
            raise ConfigurationError(f"Kernel taps must sum to 1, got {taps.sum()}")

    def blur_matrix(self, n: int) -> np.ndarray:
        """(n, n) matrix of the 1-D blur with the kernel's boundary rule."""
        return _blur_matrix(self.taps, self.boundary, n)

    def down_matrix(self, n: int) -> np.ndarray:
        """(n/2, n): blur then keep even samples."""
        return _down_matrix(self.taps, self.boundary, n)

    def up_matrix(self, n: int) -> np.ndarray:
        """(2n, n): zero insertion then blur with 2·taps."""
        return _up_matrix(self.taps, self.boundary, n)


DEFAULT_KERNEL = PyramidKernel()


@lru_cache(maxsize=None)
def _blur_matrix(taps, boundary, n):
    # column j is the blurred unit impulse e_j
    matrix = ndimage.correlate1d(
        np.eye(n), np.asarray(taps), axis=0, mode=_NDIMAGE_MODE[boundary]
    )
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=None)
def _down_matrix(taps, boundary, n):
    matrix = np.ascontiguousarray(_blur_matrix(taps, boundary, n)[::2, :])
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=None)
def _up_matrix(taps, boundary, n):
    matrix = 2.0 * _blur_matrix(taps, boundary, 2 * n)[:, ::2]
    matrix.setflags(write=False)
    return matrix


def separable_apply(rows: np.ndarray, cols: np.ndarray, data: np.ndarray) -> np.ndarray:
    """rows @ X @ cols.T on every channel plane of an (h, w, c) array."""
    tmp = np.einsum("ij,jkc->ikc", rows, data)
    return np.einsum("lk,ikc->ilc", cols, tmp)


def down_array(data: np.ndarray, kernel: PyramidKernel = DEFAULT_KERNEL) -> np.ndarray:
    h, w = data.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError(f"down needs even height and width, got {data.shape}")
    return separable_apply(kernel.down_matrix(h), kernel.down_matrix(w), data)


def up_array(data: np.ndarray, kernel: PyramidKernel = DEFAULT_KERNEL) -> np.ndarray:
    h, w = data.shape[:2]
    return separable_apply(kernel.up_matrix(h), kernel.up_matrix(w), data)


def down(x: Field, kernel: PyramidKernel = DEFAULT_KERNEL) -> Field:
    """Blur and decimate by 2 in both axes, channel by channel."""
    return Field(down_array(x.data, kernel))


def up(x: Field, kernel: PyramidKernel = DEFAULT_KERNEL) -> Field:
    """Zero-insert to double resolution and blur; constants are fixed points."""
    return Field(up_array(x.data, kernel))


@dataclass(frozen=True, eq=False)
class LaplacianPyramid:
    """Levels ordered coarse to fine: ``levels[0]`` is x^(L), ``levels[-1]`` x^(1)."""

    levels: List[Field]
    kernel: PyramidKernel = field(default=DEFAULT_KERNEL)

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ConfigurationError(
                f"A pyramid needs at least 2 levels, got {len(self.levels)}"
            )
        finest = self.levels[-1]
        for i in range(1, self.num_levels + 1):
            scale = 2 ** (i - 1)
            expected = (finest.height // scale, finest.width // scale, finest.channels)
            got = self.level(i).shape
            if got != expected or finest.height % scale or finest.width % scale:
                raise ShapeError(
                    f"Pyramid level {i} has shape {got}, expected {expected} "
                    f"for base shape {finest.shape}"
                )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def base_shape(self) -> Tuple[int, int]:
        return self.levels[-1].height, self.levels[-1].width

    def level(self, i: int) -> Field:
        """x^(i), 1 ≤ i ≤ L."""
        if not 1 <= i <= self.num_levels:
            raise ConfigurationError(
                f"Level {i} out of range 1..{self.num_levels}"
            )
        return self.levels[self.num_levels - i]

    def __repr__(self) -> str:
        return f"LaplacianPyramid(num_levels={self.num_levels}, base_shape={self.base_shape})"


def decompose(
    x: Field, num_levels: int, kernel: PyramidKernel = DEFAULT_KERNEL
) -> LaplacianPyramid:
    """Laplacian pyramid with x^(L) = down^(L-1)(x), x^(i) = g_(i-1) - up(g_i)."""
    if num_levels < 2:
        raise ConfigurationError(f"num_levels must be ≥ 2, got {num_levels}")
    scale = 2 ** (num_levels - 1)
    if x.height % scale or x.width % scale:
        raise ShapeError(
            f"Shape {x.shape} is not divisible by {scale} for a {num_levels}-level pyramid"
        )

    gaussians = [x.data]
    for _ in range(num_levels - 1):
        gaussians.append(down_array(gaussians[-1], kernel))

    bands = [Field(gaussians[-1])]
    for i in range(num_levels - 1, 0, -1):
        bands.append(Field(gaussians[i - 1] - up_array(gaussians[i], kernel)))
    return LaplacianPyramid(levels=bands, kernel=kernel)


def partial_reconstruct(p: LaplacianPyramid, from_level: int) -> Field:
    """x^(i) + up(x^(i+1) + up(...x^(L))) at level-i resolution."""
    if not 1 <= from_level <= p.num_levels:
        raise ConfigurationError(
            f"from_level {from_level} out of range 1..{p.num_levels}"
        )
    result = p.level(p.num_levels).data
    for i in range(p.num_levels - 1, from_level - 1, -1):
        result = p.level(i).data + up_array(result, p.kernel)
    return Field(result)


def reconstruct(p: LaplacianPyramid) -> Field:
    return partial_reconstruct(p, 1)


def save_pyramid(p: LaplacianPyramid, prefix: PathLike) -> List[str]:
    """Write each level to ``{prefix}.l{i}.fld``, coarsest first."""
    paths = []
    for i in range(p.num_levels, 0, -1):
        path = f"{prefix}.l{i}.fld"
        save_field(p.level(i), path)
        paths.append(path)
    return paths


def load_pyramid(
    prefix: PathLike, num_levels: int, kernel: PyramidKernel = DEFAULT_KERNEL
) -> LaplacianPyramid:
    levels = [load_field(f"{prefix}.l{i}.fld") for i in range(num_levels, 0, -1)]
    return LaplacianPyramid(levels=levels, kernel=kernel)
