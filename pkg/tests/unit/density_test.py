# Copyright (c) 2026. All rights reserved.

import unittest

import numpy as np

from avfgle.montecarlo.density import (
    DensityGrid, density_refinement_probe, histogram2d, kde2d,
    ks_standard_normal, same_law_tv_baseline, silverman_bandwidth,
    total_variation
)

RANGE = ((-3.0, 3.0), (-3.0, 3.0))


class HistogramTest(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(21)

    def test_normalized(self) -> None:
        vx = self.rng.uniform(-3.0, 3.0, (5000, 2))
        grid = histogram2d(vx, 16, RANGE)
        self.assertAlmostEqual(grid.integral(), 1.0, places=12)
        self.assertEqual(grid.density.shape, (16, 16))
        self.assertEqual(len(grid.rows()), 256)
        v, x, _ = grid.rows()[0]
        self.assertAlmostEqual(v, -3.0 + 6.0 / 32.0)
        self.assertAlmostEqual(x, -3.0 + 6.0 / 32.0)

    def test_full_states_use_v_and_x(self) -> None:
        states = self.rng.normal(size=(2000, 5))
        a = histogram2d(states, 8, RANGE)
        b = histogram2d(states[:, [0, -1]], 8, RANGE)
        np.testing.assert_array_equal(a.density, b.density)

    def test_diverged_rows_are_dropped(self) -> None:
        states = self.rng.normal(size=(1200, 5))
        with_nan = np.concatenate((states, np.full((50, 5), np.nan)))
        np.testing.assert_array_equal(
            histogram2d(with_nan, 8, RANGE).density,
            histogram2d(states, 8, RANGE).density
        )

    def test_invalid_input(self) -> None:
        with self.assertRaises(ValueError):
            histogram2d(self.rng.normal(size=(999, 2)), 8, RANGE)
        with self.assertRaises(ValueError):
            histogram2d(np.full((2000, 2), 10.0), 8, RANGE)
        with self.assertRaises(ValueError):
            histogram2d(self.rng.normal(size=(2000, 2)), 8,
                        ((1.0, 1.0), (-3.0, 3.0)))
        with self.assertRaises(ValueError):
            histogram2d(self.rng.normal(size=(2000, 2)), 0, RANGE)


class TotalVariationTest(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(22)

    def test_identical_and_disjoint(self) -> None:
        a = self.rng.uniform(-3.0, -1.0, (2000, 2))
        b = self.rng.uniform(1.0, 3.0, (2000, 2))
        ga = histogram2d(a, 6, RANGE)
        self.assertEqual(total_variation(ga, ga), 0.0)
        self.assertAlmostEqual(
            total_variation(ga, histogram2d(b, 6, RANGE)), 1.0, places=12
        )

    def test_grid_mismatch(self) -> None:
        a = histogram2d(self.rng.normal(size=(2000, 2)), 6, RANGE)
        b = histogram2d(self.rng.normal(size=(2000, 2)), 8, RANGE)
        with self.assertRaises(ValueError):
            total_variation(a, b)

    def test_same_law_baseline(self) -> None:
        def sampler(n: int) -> np.ndarray:
            return self.rng.normal(size=(n, 2))

        mean, sd = same_law_tv_baseline(sampler, 2000, 8, RANGE, 4)
        self.assertGreater(mean, 0.0)
        self.assertLess(mean, 0.2)
        self.assertGreaterEqual(sd, 0.0)
        self.assertEqual(same_law_tv_baseline(sampler, 2000, 8, RANGE, 1)[1],
                         0.0)
        with self.assertRaises(ValueError):
            same_law_tv_baseline(sampler, 2000, 8, RANGE, 0)


class KernelDensityTest(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(23)

    def test_bandwidth(self) -> None:
        self.assertEqual(silverman_bandwidth(np.ones(100)), 1e-6)
        x = self.rng.normal(size=10000)
        self.assertAlmostEqual(silverman_bandwidth(x),
                               0.9 * 10000 ** -0.2, delta=0.02)

    def test_kde_mass(self) -> None:
        vx = 0.5 * self.rng.normal(size=(3000, 2))
        grid = kde2d(vx, 64, RANGE)
        self.assertIsInstance(grid, DensityGrid)
        self.assertAlmostEqual(grid.integral(), 1.0, delta=1e-2)
        # the peak sits near the origin
        i, j = np.unravel_index(np.argmax(grid.density), grid.density.shape)
        self.assertLess(abs(grid.v_centers[i]), 0.5)
        self.assertLess(abs(grid.x_centers[j]), 0.5)

    def test_refinement_probe(self) -> None:
        a = self.rng.normal(size=(1500, 5))
        self.assertEqual(density_refinement_probe(a, a.copy(), 16, RANGE), 0.0)
        shifted = a + np.array([0.5, 0.0, 0.0, 0.0, 0.0])
        self.assertGreater(density_refinement_probe(a, shifted, 16, RANGE),
                           0.01)
        with self.assertRaises(ValueError):
            density_refinement_probe(a, a[:10], 16, RANGE)

    def test_ks_standard_normal(self) -> None:
        self.assertLess(ks_standard_normal(self.rng.uniform(size=5000)), 1e-6)
        self.assertGreater(ks_standard_normal(self.rng.normal(size=5000)),
                           1e-4)


if __name__ == '__main__':
    unittest.main()
