# Copyright (c) 2026. All rights reserved.

import math
from typing import Dict, List, Optional, Sequence
import unittest

import numpy as np

from avfgle.integrator import StepperConfig
from avfgle.model import reference_params
from avfgle.montecarlo.ensemble import PathResult
from avfgle.montecarlo.estimators import (
    ERROR_TABLE_HEADER, ErrorTable, InsufficientPaths, bootstrap_std_error,
    build_error_table, common_terminals, lyapunov_drift, order_regression,
    path_average_summary, stationarity_variation, strong_error,
    successive_orders, temporal_average, weak_error
)

LEVELS = (0.1, 0.05, 0.025, 0.0125)


def make_results(
    terminals: Sequence[Dict[float, Optional[np.ndarray]]]
) -> List[PathResult]:
    return [
        PathResult(
            path_index=i,
            terminal=t,
            diverged={h: y is None for h, y in t.items()},
            mean_newton_iters={h: 2.0 for h in t},
            max_newton_iters={h: 3 for h in t},
            fallback_steps={h: 0 for h in t}
        )
        for i, t in enumerate(terminals)
    ]


def first_order_results(n: int, seed: int = 0) -> List[PathResult]:
    # Y_h = Y + h xi, so differences between levels halve with h
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        y = rng.normal(size=5)
        xi = rng.normal(size=5)
        out.append({h: y + h * xi for h in LEVELS})
    return make_results(out)


class ErrorEstimatorTest(unittest.TestCase):
    def test_strong_error(self) -> None:
        results = make_results([
            {0.1: np.zeros(5), 0.05: np.full(5, 2.0)} for _ in range(10)
        ])
        est = strong_error(results, (0.1, 0.05), min_paths=5)
        self.assertAlmostEqual(est.value, math.sqrt(20.0))
        self.assertEqual(est.n_effective, 10)
        self.assertAlmostEqual(est.std_error, 0.0)

    def test_weak_error(self) -> None:
        results = make_results([
            {0.1: np.full(5, float(i)), 0.05: np.full(5, float(i) + 0.5)}
            for i in range(10)
        ])
        est = weak_error(results, (0.1, 0.05), lambda y: y[..., 0],
                         min_paths=5)
        self.assertAlmostEqual(est.value, 0.5)

    def test_diverged_paths_are_excluded(self) -> None:
        terminals: List[Dict[float, Optional[np.ndarray]]] = [
            {0.1: np.zeros(5), 0.05: np.ones(5)} for _ in range(8)
        ]
        terminals += [{0.1: None, 0.05: np.ones(5)} for _ in range(2)]
        results = make_results(terminals)
        a, b, excluded = common_terminals(results, (0.1, 0.05), min_paths=5)
        self.assertEqual(a.shape, (8, 5))
        self.assertEqual(excluded, 2)
        with self.assertRaises(InsufficientPaths) as ctx:
            common_terminals(results, (0.1, 0.05), min_paths=9)
        self.assertEqual(ctx.exception.n_common, 8)
        self.assertEqual(ctx.exception.required, 9)

    def test_orders(self) -> None:
        self.assertEqual(successive_orders([4.0, 2.0, 1.0]), [1.0, 1.0, None])
        self.assertEqual(successive_orders([4.0, 0.0, 1.0]),
                         [None, None, None])
        hs = [0.1, 0.05, 0.025]
        self.assertAlmostEqual(
            order_regression(hs, [3.0 * h ** 2 for h in hs]), 2.0
        )
        with self.assertRaises(ValueError):
            order_regression(hs, [0.0, 0.0, 1.0])

    def test_error_table(self) -> None:
        results = first_order_results(200)
        table = build_error_table(
            results, LEVELS, lambda y: np.sin(y[..., 0]),
            rng=np.random.default_rng(1), min_paths=100, n_resamples=50
        )
        self.assertEqual(table.header, ERROR_TABLE_HEADER)
        self.assertEqual(table.hs, list(LEVELS[:-1]))
        self.assertAlmostEqual(table.strong_slope(), 1.0, places=10)
        for row in table.rows[:-1]:
            self.assertAlmostEqual(row.strong_order, 1.0, places=10)
        self.assertIsNone(table.rows[-1].strong_order)
        self.assertEqual(table.rows[0].n_effective, 200)
        self.assertEqual(table.rows[0].n_diverged, 0)
        self.assertTrue(all(r.strong_std_error > 0 for r in table.rows))

        again = ErrorTable.from_rows(table.to_rows())
        self.assertEqual(again.to_rows(), table.to_rows())

        with self.assertRaises(ValueError):
            build_error_table(results, LEVELS[:1], lambda y: y[..., 0])

    def test_bootstrap(self) -> None:
        rng = np.random.default_rng(2)
        x = rng.normal(size=400)
        se = bootstrap_std_error(x, np.mean, np.random.default_rng(3), 400)
        self.assertAlmostEqual(se, 1.0 / math.sqrt(400), delta=0.0125)
        self.assertTrue(math.isnan(bootstrap_std_error(x[:1], np.mean)))


class TemporalAverageTest(unittest.TestCase):
    def test_running_mean(self) -> None:
        values = np.array([[1.0, 3.0], [2.0, np.nan], [3.0, 5.0]])
        np.testing.assert_allclose(temporal_average(values),
                                   [2.0, 2.0, 8.0 / 3.0])
        np.testing.assert_allclose(temporal_average(values, burn_in=1),
                                   [2.0, 3.0])
        with self.assertRaises(ValueError):
            temporal_average(values, burn_in=3)

    def test_path_average_summary(self) -> None:
        averages = np.array([[1.0, 2.0, 3.0, np.nan], [2.0, 2.0, 2.0, 2.0]])
        mean, se = path_average_summary(averages)
        np.testing.assert_allclose(mean, [2.0, 2.0])
        np.testing.assert_allclose(se, [1.0 / math.sqrt(3.0), 0.0])

    def test_stationarity(self) -> None:
        series = np.array([10.0, 2.0, 2.1, 1.9, 2.0])
        self.assertAlmostEqual(stationarity_variation(series, 1),
                               0.2 / 2.0)
        with self.assertRaises(ValueError):
            stationarity_variation(series, 5)


class LyapunovDriftTest(unittest.TestCase):
    def test_contraction(self) -> None:
        cfg = StepperConfig(reference_params(), 0.125)
        rng = np.random.default_rng(4)
        starts = rng.uniform(-3.0, 3.0, (30, 5))
        fit = lyapunov_drift(cfg, starts, rng, n_inner=200)
        self.assertLess(fit.alpha, 1.0)
        self.assertGreater(fit.alpha, 0.0)
        self.assertTrue(math.isfinite(fit.max_residual))
        with self.assertRaises(ValueError):
            lyapunov_drift(cfg, starts[:1], rng)


if __name__ == '__main__':
    unittest.main()
