"""Field container, deterministic RNG and the FLD1 file format."""

import os
import struct
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from cascadesr.errors import (
    ConfigurationError,
    FieldHeaderError,
    FieldIOError,
    FieldSizeError,
    FieldTruncatedError,
    NonFiniteError,
    ShapeError,
)

FLD_MAGIC = b"FLD1"
_HEADER = struct.Struct("<4sIII")

Shape = Tuple[int, int, int]
PathLike = Union[str, os.PathLike]


@dataclass(frozen=True, eq=False)
class Field:
    """A 2-D grid of float64 values with 1 or 2 channels.

    Two channels encode a complex image as (real, imaginary) planes. The
    array is stored as (height, width, channels), row-major, channel-minor,
    and is read-only once constructed.

    Parameters
    ----------
    data : array_like
        Array of shape (h, w) or (h, w, c) with c in {1, 2}.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 2):
            raise ShapeError(
                f"Field needs shape (h, w) or (h, w, c) with c in {{1, 2}}, got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"Field dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"Field of shape {arr.shape} holds NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "Field":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def full(
        cls, height: int, width: int, value: float, channels: int = 1
    ) -> "Field":
        return cls(np.full((height, width, channels), float(value)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def magnitude(self) -> np.ndarray:
        """Per-pixel magnitude, (h, w). Equals |x| for a single channel."""
        return np.sqrt(np.sum(self.data**2, axis=2))

    def __add__(self, other: "Field") -> "Field":
        return field_add(self, other)

    def __sub__(self, other: "Field") -> "Field":
        return field_sub(self, other)

    def __neg__(self) -> "Field":
        return Field(-self.data)

    def __mul__(self, alpha: float) -> "Field":
        return field_scale(self, alpha)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Field(height={self.height}, width={self.width}, channels={self.channels})"


def _check_same_shape(a: Field, b: Field, action: str):
    if a.shape != b.shape:
        raise ShapeError(f"Cannot {action} fields of shape {a.shape} and {b.shape}")


def field_add(a: Field, b: Field) -> Field:
    _check_same_shape(a, b, "add")
    return Field(a.data + b.data)


def field_sub(a: Field, b: Field) -> Field:
    _check_same_shape(a, b, "subtract")
    return Field(a.data - b.data)


def field_scale(a: Field, alpha: float) -> Field:
    return Field(float(alpha) * a.data)


def inner(a: Field, b: Field) -> float:
    _check_same_shape(a, b, "take the inner product of")
    return float(np.vdot(a.data, b.data))


def norm(a: Field) -> float:
    return float(np.linalg.norm(a.data.ravel()))


class Rng:
    """Seeded random stream.

    Draws come from numpy's Philox-4x64 counter-based bit generator keyed by
    ``SeedSequence(seed, spawn_key=key)``, so a (seed, key) pair yields the same
    stream on every platform. Independent streams are obtained with
    :meth:`derive` instead of sharing one Rng between workers.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if seed < 0 or seed >= 2**64:
            raise ConfigurationError(
                f"seed must be a 64-bit unsigned integer, got {seed}"
            )
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *key: int) -> "Rng":
        """Independent child stream; same (seed, key) always gives the same child."""
        return Rng(self.seed, self.key + tuple(key))

    def normal(self, shape) -> np.ndarray:
        return self._generator.standard_normal(shape)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self._generator.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        return self._generator.integers(low, high, shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def gaussian_field(rng: Rng, shape: Shape, sigma: float) -> Field:
    """I.i.d. N(0, sigma^2) entries; sigma=0 returns zeros without drawing."""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return Field(np.zeros(shape))
    return Field(sigma * rng.normal(shape))


def save_field(f: Field, path: PathLike):
    """Write `f` in the FLD1 format (16-byte header, float64 LE payload).

    Missing parent directories are created.
    """
    header = _HEADER.pack(FLD_MAGIC, f.height, f.width, f.channels)
    payload = np.ascontiguousarray(f.data, dtype="<f8").tobytes()
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "wb") as file:
            file.write(header)
            file.write(payload)
    except OSError as e:
        raise FieldIOError(f"Cannot write field to {path}: {e}") from e


def load_field(path: PathLike) -> Field:
    try:
        with open(path, "rb") as file:
            raw = file.read()
    except OSError as e:
        raise FieldIOError(f"Cannot read field from {path}: {e}") from e

    if len(raw) < _HEADER.size:
        raise FieldHeaderError(
            f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}"
        )
    magic, height, width, channels = _HEADER.unpack_from(raw)
    if magic != FLD_MAGIC:
        raise FieldHeaderError(f"{path}: bad magic {magic!r}, expected {FLD_MAGIC!r}")
    if height == 0 or width == 0 or channels not in (1, 2):
        raise FieldHeaderError(
            f"{path}: invalid header shape ({height}, {width}, {channels})"
        )

    expected = height * width * channels * 8
    payload = raw[_HEADER.size :]
    if len(payload) < expected:
        raise FieldTruncatedError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise FieldSizeError(
            f"{path}: {len(payload) - expected} trailing bytes after the payload"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(height, width, channels)
    return Field(data)
