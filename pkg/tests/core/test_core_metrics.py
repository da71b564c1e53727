import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from cascadesr.errors import ConfigurationError, ShapeError
from cascadesr.grid import Field, Rng, save_field
from cascadesr.metrics import evaluate_pairs, psnr, ssim
from cascadesr.models import MetricReport, MetricRow


def brute_force_ssim(x, ref, data_range):
    radius = 5
    offsets = np.arange(-radius, radius + 1)
    g = np.exp(-(offsets**2) / (2 * 1.5**2))
    window = np.outer(g, g)
    window /= window.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    values = []
    for i in range(radius, x.shape[0] - radius):
        for j in range(radius, x.shape[1] - radius):
            a = x[i - radius : i + radius + 1, j - radius : j + radius + 1]
            b = ref[i - radius : i + radius + 1, j - radius : j + radius + 1]
            mu_a, mu_b = np.sum(window * a), np.sum(window * b)
            var_a = np.sum(window * a * a) - mu_a**2
            var_b = np.sum(window * b * b) - mu_b**2
            cov = np.sum(window * a * b) - mu_a * mu_b
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


class TestPsnr(unittest.TestCase):
    def test_identical_is_infinite(self):
        x = Field(Rng(0).normal((8, 8, 1)))
        self.assertEqual(psnr(x, x), math.inf)

    def test_unit_error_is_zero_db(self):
        ref = Field.zeros(4, 4).data.copy()
        ref[0, 0, 0] = 1.0
        ref = Field(ref)
        self.assertAlmostEqual(psnr(Field(ref.data + 1.0), ref), 0.0, places=10)

    def test_uniform_error_tenth(self):
        ref = Field(np.linspace(0.0, 1.0, 16).reshape(4, 4))
        self.assertAlmostEqual(psnr(Field(ref.data + 0.1), ref), 20.0, places=10)

    def test_peak_comes_from_reference(self):
        ref = Field(np.full((4, 4), 1.0))
        x = Field(np.full((4, 4), 2.0))
        self.assertAlmostEqual(psnr(x, ref), 0.0, places=10)
        self.assertAlmostEqual(psnr(ref, x), 10 * np.log10(4.0), places=10)

    def test_zero_reference(self):
        with self.assertRaises(ConfigurationError):
            psnr(Field.full(4, 4, 1.0), Field.zeros(4, 4))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            psnr(Field.zeros(4, 4), Field.full(8, 8, 1.0))

    def test_permutation_covariance(self):
        rng = Rng(1)
        x, ref = rng.normal((8, 8)), rng.normal((8, 8))
        order = np.argsort(rng.uniform(64))
        shuffled_x = Field(x.ravel()[order].reshape(8, 8))
        shuffled_ref = Field(ref.ravel()[order].reshape(8, 8))
        self.assertAlmostEqual(
            psnr(Field(x), Field(ref)), psnr(shuffled_x, shuffled_ref), places=12
        )

    def test_complex_fields_compare_magnitudes(self):
        ref = Rng(2).normal((8, 8, 2))
        rotated = np.stack([-ref[:, :, 1], ref[:, :, 0]], axis=2)
        self.assertEqual(psnr(Field(rotated), Field(ref)), math.inf)


class TestSsim(unittest.TestCase):
    def test_identical_is_one(self):
        x = Field(Rng(3).normal((16, 16, 1)))
        self.assertAlmostEqual(ssim(x, x), 1.0, places=12)

    def test_negated_checkerboard_is_negative(self):
        i, j = np.indices((16, 16))
        ref = Field((-1.0) ** (i + j))
        self.assertLess(ssim(-ref, ref), 0.0)

    def test_matches_brute_force(self):
        rng = Rng(4)
        x, ref = rng.normal((32, 32)), rng.normal((32, 32))
        expected = brute_force_ssim(x, ref, np.max(np.abs(ref)))
        self.assertLess(abs(ssim(Field(x), Field(ref)) - expected), 1e-10)

    def test_scaling_invariance(self):
        rng = Rng(5)
        x, ref = rng.normal((16, 16)), rng.normal((16, 16))
        self.assertAlmostEqual(
            ssim(Field(x), Field(ref)), ssim(Field(3.0 * x), Field(3.0 * ref)), places=10
        )

    def test_window_too_large(self):
        with self.assertRaises(ConfigurationError):
            ssim(Field.full(10, 16, 1.0), Field.full(10, 16, 1.0))


class TestEvaluatePairs(unittest.TestCase):
    def test_directory_scoring(self):
        rng = Rng(6)
        with tempfile.TemporaryDirectory() as tmp:
            pred_dir, ref_dir = os.path.join(tmp, "pred"), os.path.join(tmp, "ref")
            os.makedirs(pred_dir)
            os.makedirs(ref_dir)
            for name in ("b.fld", "a.fld"):
                ref = Field(rng.normal((16, 16)))
                save_field(ref, os.path.join(ref_dir, name))
                save_field(ref, os.path.join(pred_dir, name))
            report = evaluate_pairs(pred_dir, ref_dir)
            self.assertEqual([row.filename for row in report.rows], ["a.fld", "b.fld"])
            self.assertTrue(all(row.psnr_db == math.inf for row in report.rows))

            csv_path = os.path.join(tmp, "metrics.csv")
            report.to_csv(csv_path)
            with open(csv_path, "r", encoding="utf-8") as file:
                lines = file.read().splitlines()
            self.assertEqual(lines[0], "filename,psnr_db,ssim")
            self.assertTrue(lines[1].startswith("a.fld,inf,"))

    def test_missing_prediction(self):
        with tempfile.TemporaryDirectory() as tmp:
            save_field(Field.full(16, 16, 1.0), os.path.join(tmp, "x.fld"))
            empty = os.path.join(tmp, "empty")
            os.makedirs(empty)
            with self.assertRaises(ConfigurationError):
                evaluate_pairs(empty, tmp)


class TestMetricReport(unittest.TestCase):
    def test_aggregate_per_algorithm(self):
        report = MetricReport(
            rows=[
                MetricRow(filename="a", psnr_db=20.0, ssim=0.5, algo="x"),
                MetricRow(filename="b", psnr_db=30.0, ssim=0.7, algo="x"),
                MetricRow(filename="a", psnr_db=math.inf, ssim=1.0, algo="y"),
            ]
        )
        table = report.aggregate()
        self.assertIsInstance(table, pd.DataFrame)
        row = table[table["algo"] == "x"].iloc[0]
        self.assertAlmostEqual(row["psnr_mean"], 25.0)
        self.assertAlmostEqual(row["psnr_std"], 5.0)
        self.assertAlmostEqual(row["ssim_mean"], 0.6)
        self.assertEqual(report.mean_psnr("x"), 25.0)
        self.assertEqual(report.mean_psnr("y"), math.inf)
        self.assertEqual(list(report.to_frame().columns), ["algo", "filename", "psnr_db", "ssim"])

    def test_ssim_range_validated(self):
        with self.assertRaises(Exception):
            MetricRow(filename="a", psnr_db=1.0, ssim=1.5)


if __name__ == "__main__":
    unittest.main()
