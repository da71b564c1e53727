"""Small fully-connected denoiser with hand-written backpropagation, its
training loop and the CKP1 checkpoint format.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cascadesr.diffusion import check_conditioning
from cascadesr.errors import (
    CheckpointError,
    ConfigurationError,
    DivergenceError,
    ShapeError,
)
from cascadesr.grid import Field, PathLike, Rng, Shape
from cascadesr.models import NoiseSchedule, TrainConfig
from cascadesr.utils import progress

CKP_MAGIC = b"CKP1"
EMBED_DIM = 2


def sigma_embedding(sigmas: np.ndarray) -> np.ndarray:
    """(B,) noise levels -> (B, EMBED_DIM) features."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    return np.stack(
        [np.log(np.maximum(sigmas, 1e-6)) / 4.0, 1.0 / np.sqrt(1.0 + sigmas**2)],
        axis=1,
    )


class MlpDenoiser:
    """x0-predicting MLP over flattened fields.

    The input is the noisy field scaled by 1/sqrt(sigma² + sigma_data²),
    concatenated with a noise-level embedding and the flattened conditioning
    fields. Hidden layers use tanh; the output layer is affine.

    Parameters
    ----------
    field_shape : (h, w, c)
        Shape of the field being denoised.
    cond_shapes : sequence of (h, w, c)
        Shapes of the conditioning fields, in order.
    hidden : int
        Width of every hidden layer.
    num_layers : int
        Number of affine layers (hidden layers + output layer).
    seed : int
        Seed of the weight initialization.
    sigma_data : float
        Typical data scale used by the input scaling.
    """

    trainable = True

    def __init__(
        self,
        field_shape: Shape,
        cond_shapes: Sequence[Shape] = (),
        hidden: int = 256,
        num_layers: int = 3,
        seed: int = 0,
        sigma_data: float = 0.5,
    ):
        if num_layers < 1 or hidden < 1:
            raise ConfigurationError(
                f"Need num_layers ≥ 1 and hidden ≥ 1, got {num_layers}, {hidden}"
            )
        self.field_shape = tuple(int(s) for s in field_shape)
        self.cond_shapes = [tuple(int(s) for s in c) for c in cond_shapes]
        self.sigma_data = float(sigma_data)
        n_field = int(np.prod(self.field_shape))
        n_cond = sum(int(np.prod(c)) for c in self.cond_shapes)
        self.layer_sizes = (
            [n_field + EMBED_DIM + n_cond] + [hidden] * (num_layers - 1) + [n_field]
        )

        rng = Rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(rng.normal((n_out, n_in)) / math.sqrt(n_in))
            self.biases.append(np.zeros(n_out))

    @property
    def parameter_count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def cost(self) -> float:
        return float(self.parameter_count)

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def set_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count:
            raise ShapeError(
                f"Expected {self.parameter_count} parameters, got {flat.size}"
            )
        offset = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[offset : offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[i] = flat[offset : offset + b.size].copy()
            offset += b.size

    def _inputs(self, xt: np.ndarray, sigmas: np.ndarray, cond: Optional[np.ndarray]):
        scale = 1.0 / np.sqrt(sigmas**2 + self.sigma_data**2)
        parts = [xt * scale[:, None], sigma_embedding(sigmas)]
        if cond is not None and cond.shape[1]:
            parts.append(cond)
        return np.concatenate(parts, axis=1)

    def _forward(self, inputs: np.ndarray):
        activations = [inputs]
        out = inputs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = out @ w.T + b
            if i < last:
                out = np.tanh(out)
                activations.append(out)
        return out, activations

    def predict(
        self, xt: np.ndarray, sigmas: np.ndarray, cond: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Batched forward on flattened arrays: (B, P), (B,), (B, Q) -> (B, P)."""
        out, _ = self._forward(self._inputs(xt, np.asarray(sigmas, float), cond))
        return out

    def evaluate(
        self, xt: Field, sigma: float, cond: Optional[Sequence[Field]] = None
    ) -> Field:
        if xt.shape != self.field_shape:
            raise ShapeError(f"Model expects {self.field_shape}, got {xt.shape}")
        cond = check_conditioning(self, cond)
        flat_cond = (
            np.concatenate([c.data.ravel() for c in cond])[None, :] if cond else None
        )
        out = self.predict(xt.data.reshape(1, -1), np.array([sigma]), flat_cond)
        return Field(out.reshape(self.field_shape))

    def loss_and_gradients(
        self,
        x0: np.ndarray,
        sigmas: np.ndarray,
        noise: np.ndarray,
        cond: Optional[np.ndarray] = None,
    ) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
        """Mean squared x0-prediction error and its gradient per layer.

        Parameters
        ----------
        x0 : np.ndarray
            (B, P) clean targets.
        sigmas : np.ndarray
            (B,) noise levels.
        noise : np.ndarray
            (B, P) standard normal draws; the input is x0 + sigma * noise.
        cond : np.ndarray, default=None
            (B, Q) flattened conditioning.

        Returns
        -------
        loss : float
        grads : list of (dW, db)
            One pair per affine layer, same shapes as the weights.
        """

        xt = x0 + sigmas[:, None] * noise
        out, activations = self._forward(self._inputs(xt, sigmas, cond))
        diff = out - x0
        loss = float(np.mean(diff**2))

        grads = [None] * len(self.weights)
        delta = 2.0 * diff / diff.size
        for i in range(len(self.weights) - 1, -1, -1):
            grads[i] = (delta.T @ activations[i], delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - activations[i] ** 2)
        return loss, grads

    def __repr__(self) -> str:
        return (
            f"MlpDenoiser(field_shape={self.field_shape}, layers={self.layer_sizes}, "
            f"parameters={self.parameter_count})"
        )


@dataclass
class TrainingResult:
    model: MlpDenoiser
    losses: List[float] = field(default_factory=list)


def _stack_dataset(model: MlpDenoiser, dataset):
    if len(dataset) == 0:
        raise ConfigurationError("Training dataset is empty")
    targets, conds = [], []
    for index, (x0, cond) in enumerate(dataset):
        if x0.shape != model.field_shape:
            raise ShapeError(
                f"Sample {index} has shape {x0.shape}, model expects {model.field_shape}"
            )
        cond = list(cond or [])
        if [c.shape for c in cond] != model.cond_shapes:
            raise ShapeError(
                f"Sample {index} conditioning {[c.shape for c in cond]} "
                f"does not match {model.cond_shapes}"
            )
        targets.append(x0.data.ravel())
        conds.append(
            np.concatenate([c.data.ravel() for c in cond]) if cond else np.zeros(0)
        )
    return np.stack(targets), np.stack(conds)


def denoising_loss(
    model: MlpDenoiser,
    dataset: Sequence[Tuple[Field, Sequence[Field]]],
    schedule: NoiseSchedule,
    rng: Rng,
    num_samples: int = 256,
) -> float:
    """Monte Carlo estimate of the training objective, weights untouched."""
    targets, conds = _stack_dataset(model, dataset)
    index = rng.integers(0, len(targets), num_samples)
    log_min, log_max = math.log(schedule.sigma_min), math.log(schedule.sigma_max)
    sigmas = np.exp(rng.uniform(num_samples, log_min, log_max))
    noise = rng.normal((num_samples, targets.shape[1]))
    loss, _ = model.loss_and_gradients(targets[index], sigmas, noise, conds[index])
    return loss


def train_denoiser(
    model: MlpDenoiser,
    dataset: Sequence[Tuple[Field, Sequence[Field]]],
    schedule: NoiseSchedule,
    config: TrainConfig = TrainConfig(),
    show_progress: bool = False,
) -> TrainingResult:
    """Fit `model` to predict x0 from x0 + sigma·eps by SGD with momentum.

    sigma is drawn log-uniformly in [sigma_min, sigma_max]. The model is
    updated in place and returned with the per-step loss trace.
    """

    targets, conds = _stack_dataset(model, dataset)
    rng = Rng(config.seed)
    log_min, log_max = math.log(schedule.sigma_min), math.log(schedule.sigma_max)
    velocity = [
        (np.zeros_like(w), np.zeros_like(b))
        for w, b in zip(model.weights, model.biases)
    ]

    losses = []
    steps = progress(range(config.iterations), "train", show_progress)
    for step in steps:
        index = rng.integers(0, len(targets), config.batch_size)
        sigmas = np.exp(rng.uniform(config.batch_size, log_min, log_max))
        noise = rng.normal((config.batch_size, targets.shape[1]))
        loss, grads = model.loss_and_gradients(
            targets[index], sigmas, noise, conds[index]
        )
        if not math.isfinite(loss):
            raise DivergenceError(step=step, loss=loss)
        for i, ((dw, db), (vw, vb)) in enumerate(zip(grads, velocity)):
            vw *= config.momentum
            vw -= config.learning_rate * dw
            vb *= config.momentum
            vb -= config.learning_rate * db
            model.weights[i] += vw
            model.biases[i] += vb
        losses.append(loss)
    return TrainingResult(model=model, losses=losses)


def save_checkpoint(
    model: MlpDenoiser,
    path: PathLike,
    schedule: Optional[NoiseSchedule] = None,
    level: Optional[int] = None,
):
    metadata = {
        "layer_sizes": model.layer_sizes,
        "field_shape": list(model.field_shape),
        "cond_shapes": [list(c) for c in model.cond_shapes],
        "sigma_data": model.sigma_data,
        "schedule": schedule.to_dict() if schedule is not None else None,
        "level": level,
    }
    header = json.dumps(metadata, sort_keys=True).encode("utf-8")
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "wb") as file:
            file.write(CKP_MAGIC)
            file.write(struct.pack("<I", len(header)))
            file.write(header)
            file.write(model.get_params().astype("<f8").tobytes())
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: PathLike) -> Tuple[MlpDenoiser, dict]:
    """Read a CKP1 file; returns the model and its metadata."""
    try:
        with open(path, "rb") as file:
            raw = file.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if len(raw) < 8 or raw[:4] != CKP_MAGIC:
        raise CheckpointError(f"{path}: not a CKP1 checkpoint")
    (length,) = struct.unpack_from("<I", raw, 4)
    try:
        metadata = json.loads(raw[8 : 8 + length].decode("utf-8"))
        sizes = metadata["layer_sizes"]
        model = MlpDenoiser(
            field_shape=metadata["field_shape"],
            cond_shapes=metadata["cond_shapes"],
            hidden=sizes[1] if len(sizes) > 2 else 1,
            num_layers=len(sizes) - 1,
            sigma_data=metadata["sigma_data"],
        )
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed metadata ({e})") from e
    if model.layer_sizes != sizes:
        raise CheckpointError(
            f"{path}: layer sizes {sizes} inconsistent with shapes in metadata"
        )
    payload = raw[8 + length :]
    if len(payload) != model.parameter_count * 8:
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, expected {model.parameter_count * 8}"
        )
    model.set_params(np.frombuffer(payload, dtype="<f8"))
    return model, metadata
