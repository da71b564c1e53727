import os
import struct
import tempfile
import unittest

import numpy as np

from cascadesr.errors import (
    CheckpointError,
    ConfigurationError,
    DivergenceError,
    ShapeError,
)
from cascadesr.grid import Field, Rng
from cascadesr.models import NoiseSchedule, TrainConfig
from cascadesr.networks import (
    MlpDenoiser,
    denoising_loss,
    load_checkpoint,
    save_checkpoint,
    sigma_embedding,
    train_denoiser,
)


def batch(seed, model, size=4):
    rng = Rng(seed)
    n_field = int(np.prod(model.field_shape))
    n_cond = sum(int(np.prod(c)) for c in model.cond_shapes)
    x0 = rng.normal((size, n_field))
    sigmas = np.exp(rng.uniform(size, np.log(0.01), np.log(10.0)))
    noise = rng.normal((size, n_field))
    cond = rng.normal((size, n_cond)) if n_cond else None
    return x0, sigmas, noise, cond


class TestMlpDenoiser(unittest.TestCase):
    def test_layout(self):
        model = MlpDenoiser((4, 4, 1), [(4, 4, 1)], hidden=8, num_layers=3)
        self.assertEqual(model.layer_sizes, [16 + 2 + 16, 8, 8, 16])
        self.assertEqual(model.parameter_count, 34 * 8 + 8 + 8 * 8 + 8 + 8 * 16 + 16)
        self.assertEqual(model.cost, float(model.parameter_count))
        self.assertTrue(model.trainable)

    def test_invalid_layout(self):
        with self.assertRaises(ConfigurationError):
            MlpDenoiser((4, 4, 1), num_layers=0)

    def test_evaluate_checks_shapes(self):
        model = MlpDenoiser((4, 4, 1), [(8, 8, 1)], hidden=8)
        out = model.evaluate(Field.zeros(4, 4), 1.0, [Field.zeros(8, 8)])
        self.assertEqual(out.shape, (4, 4, 1))
        with self.assertRaises(ShapeError):
            model.evaluate(Field.zeros(8, 8), 1.0, [Field.zeros(8, 8)])
        with self.assertRaises(ShapeError):
            model.evaluate(Field.zeros(4, 4), 1.0)

    def test_evaluate_matches_batched_predict(self):
        model = MlpDenoiser((4, 4, 2), hidden=8, seed=3)
        x = Field(Rng(1).normal((4, 4, 2)))
        single = model.evaluate(x, 0.5).data.ravel()
        batched = model.predict(x.data.reshape(1, -1), np.array([0.5]))[0]
        self.assertTrue(np.array_equal(single, batched))

    def test_sigma_embedding(self):
        features = sigma_embedding(np.array([1.0, 0.0]))
        self.assertEqual(features.shape, (2, 2))
        self.assertEqual(features[0, 0], 0.0)
        self.assertAlmostEqual(features[0, 1], 1.0 / np.sqrt(2.0))
        self.assertTrue(np.all(np.isfinite(features)))

    def test_set_params_size(self):
        model = MlpDenoiser((2, 2, 1), hidden=4)
        with self.assertRaises(ShapeError):
            model.set_params(np.zeros(model.parameter_count + 1))

    def test_zero_weights_loss_is_mean_square(self):
        model = MlpDenoiser((4, 4, 1), hidden=8)
        model.set_params(np.zeros(model.parameter_count))
        x0, sigmas, noise, _ = batch(0, model)
        loss, _ = model.loss_and_gradients(x0, sigmas, noise)
        self.assertAlmostEqual(loss, float(np.mean(x0**2)), places=14)

    def test_gradients_match_finite_differences(self):
        model = MlpDenoiser((8, 8, 1), [(4, 4, 1)], hidden=12, num_layers=3, seed=1)
        x0, sigmas, noise, cond = batch(2, model)
        _, grads = model.loss_and_gradients(x0, sigmas, noise, cond)
        analytic = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])

        base = model.get_params()
        picked = Rng(3).integers(0, base.size, 60)
        h = 1e-5
        numeric = np.zeros(picked.size)
        for k, index in enumerate(picked):
            shifted = base.copy()
            shifted[index] += h
            model.set_params(shifted)
            plus, _ = model.loss_and_gradients(x0, sigmas, noise, cond)
            shifted[index] -= 2 * h
            model.set_params(shifted)
            minus, _ = model.loss_and_gradients(x0, sigmas, noise, cond)
            numeric[k] = (plus - minus) / (2 * h)
        model.set_params(base)

        error = np.linalg.norm(numeric - analytic[picked]) / np.linalg.norm(analytic[picked])
        self.assertLess(error, 1e-4)


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.schedule = NoiseSchedule(num_steps=10)

    def test_constant_dataset_is_learned(self):
        model = MlpDenoiser((4, 4, 1), hidden=16, num_layers=2, seed=0)
        dataset = [(Field.full(4, 4, 0.5), []) for _ in range(8)]
        before = denoising_loss(model, dataset, self.schedule, Rng(1))
        config = TrainConfig(iterations=1500, learning_rate=2e-2, momentum=0.9, batch_size=8)
        result = train_denoiser(model, dataset, self.schedule, config)
        after = denoising_loss(result.model, dataset, self.schedule, Rng(1))
        self.assertIs(result.model, model)
        self.assertEqual(len(result.losses), 1500)
        self.assertLess(after, 0.1 * before)

    def test_training_is_deterministic(self):
        dataset = [(Field(Rng(k).normal((2, 2))), []) for k in range(4)]
        config = TrainConfig(iterations=20)
        a = train_denoiser(MlpDenoiser((2, 2, 1), hidden=4), dataset, self.schedule, config)
        b = train_denoiser(MlpDenoiser((2, 2, 1), hidden=4), dataset, self.schedule, config)
        self.assertEqual(a.losses, b.losses)
        self.assertTrue(np.array_equal(a.model.get_params(), b.model.get_params()))

    def test_non_finite_loss_raises(self):
        model = MlpDenoiser((2, 2, 1), hidden=4)
        model.set_params(np.full(model.parameter_count, np.nan))
        dataset = [(Field.zeros(2, 2), [])]
        with self.assertRaises(DivergenceError) as cm:
            train_denoiser(model, dataset, self.schedule, TrainConfig(iterations=5))
        self.assertEqual(cm.exception.step, 0)

    def test_dataset_validation(self):
        model = MlpDenoiser((2, 2, 1), [(4, 4, 1)], hidden=4)
        with self.assertRaises(ConfigurationError):
            train_denoiser(model, [], self.schedule)
        with self.assertRaises(ShapeError):
            train_denoiser(model, [(Field.zeros(4, 4), [Field.zeros(4, 4)])], self.schedule)
        with self.assertRaises(ShapeError):
            train_denoiser(model, [(Field.zeros(2, 2), [])], self.schedule)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "m.ckpt")

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_and_load(self):
        model = MlpDenoiser((4, 4, 2), [(8, 8, 2)], hidden=6, num_layers=3, seed=4, sigma_data=0.3)
        schedule = NoiseSchedule(num_steps=50)
        save_checkpoint(model, self.path, schedule=schedule, level=1)
        loaded, metadata = load_checkpoint(self.path)
        self.assertEqual(loaded.layer_sizes, model.layer_sizes)
        self.assertEqual(loaded.cond_shapes, model.cond_shapes)
        self.assertEqual(loaded.sigma_data, 0.3)
        self.assertEqual(loaded.get_params().tobytes(), model.get_params().tobytes())
        self.assertEqual(metadata["level"], 1)
        self.assertEqual(metadata["schedule"]["num_steps"], 50)

    def test_single_layer_model(self):
        model = MlpDenoiser((2, 2, 1), num_layers=1)
        save_checkpoint(model, self.path)
        loaded, metadata = load_checkpoint(self.path)
        self.assertEqual(loaded.layer_sizes, [6, 4])
        self.assertIsNone(metadata["schedule"])

    def _write(self, raw):
        with open(self.path, "wb") as file:
            file.write(raw)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.tmp.name, "missing.ckpt"))

    def test_wrong_magic(self):
        self._write(b"CKP9" + struct.pack("<I", 0))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_malformed_metadata(self):
        self._write(b"CKP1" + struct.pack("<I", 5) + b"{oops")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_truncated_payload(self):
        save_checkpoint(MlpDenoiser((2, 2, 1), hidden=4), self.path)
        with open(self.path, "rb") as file:
            raw = file.read()
        self._write(raw[:-8])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_save_into_new_directory(self):
        path = os.path.join(self.tmp.name, "models", "m.ckpt")
        save_checkpoint(MlpDenoiser((2, 2, 1), hidden=4), path)
        self.assertTrue(os.path.isfile(path))

    def test_unwritable_path(self):
        self._write(b"")
        with self.assertRaises(CheckpointError):
            save_checkpoint(MlpDenoiser((2, 2, 1), hidden=4), os.path.join(self.path, "m.ckpt"))


if __name__ == "__main__":
    unittest.main()
