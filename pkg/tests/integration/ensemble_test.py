# Copyright (c) 2026. All rights reserved.

from concurrent.futures import ThreadPoolExecutor
import math
import unittest

import numpy as np
from scipy import linalg

from avfgle.integrator import drift
from avfgle.model import ModelParams, PotentialSpec, reference_params
from avfgle.montecarlo.ensemble import (
    ChainConfig, EnsembleConfig, run_chain, run_coupled_paths
)
from avfgle.montecarlo.estimators import order_regression

ONES = np.ones(5)


def terminals(results, h):
    return np.array([r.terminal[h] for r in results])


class CoupledPathsTest(unittest.TestCase):
    def setUp(self) -> None:
        self.params = reference_params()

    def ensemble(self, **kwargs) -> EnsembleConfig:
        base = dict(
            params=self.params,
            n_paths=12,
            T=0.25,
            levels=(0.125, 0.0625, 0.03125),
            master_seed=3,
            initial_state=ONES,
            observables=('x',),
            block_size=5
        )
        base.update(kwargs)
        return EnsembleConfig(**base)

    def test_executor_independence(self) -> None:
        cfg = self.ensemble()
        serial = run_coupled_paths(cfg)
        with ThreadPoolExecutor(max_workers=3) as pool:
            pooled = run_coupled_paths(cfg, pool)
        self.assertEqual([r.path_index for r in pooled], list(range(12)))
        for h in cfg.levels:
            np.testing.assert_array_equal(terminals(serial, h),
                                          terminals(pooled, h))

    def test_block_size_independence(self) -> None:
        a = run_coupled_paths(self.ensemble(block_size=5))
        b = run_coupled_paths(self.ensemble(block_size=12))
        for h in (0.125, 0.0625, 0.03125):
            np.testing.assert_allclose(terminals(a, h), terminals(b, h),
                                       rtol=1e-13, atol=1e-14)
        self.assertEqual(a[7].time_averages['x'].keys(),
                         b[7].time_averages['x'].keys())

    def test_seed_changes_paths(self) -> None:
        a = run_coupled_paths(self.ensemble(master_seed=3))
        b = run_coupled_paths(self.ensemble(master_seed=4))
        self.assertFalse(np.allclose(terminals(a, 0.03125),
                                     terminals(b, 0.03125)))

    def test_levels_share_noise(self) -> None:
        # coupled levels stay close; independent noise would not
        results = run_coupled_paths(self.ensemble(n_paths=40))
        coarse = terminals(results, 0.0625)
        fine = terminals(results, 0.03125)
        spread = np.sqrt(np.mean(np.sum(fine ** 2, axis=1)))
        gap = np.sqrt(np.mean(np.sum((coarse - fine) ** 2, axis=1)))
        self.assertLess(gap, 0.25 * spread)

    def test_zero_noise(self) -> None:
        results = run_coupled_paths(self.ensemble(zero_noise=True))
        for h in (0.125, 0.0625, 0.03125):
            y = terminals(results, h)
            np.testing.assert_allclose(y, np.tile(y[0], (12, 1)), rtol=1e-12)
        self.assertTrue(all(not any(r.diverged.values()) for r in results))

    def test_zero_noise_levels_converge(self) -> None:
        levels = tuple(2.0 ** -i for i in range(3, 8))
        results = run_coupled_paths(self.ensemble(
            n_paths=1, T=1.0, levels=levels, zero_noise=True
        ))
        terminal = results[0].terminal
        gaps = [
            float(np.linalg.norm(terminal[a] - terminal[b]))
            for a, b in zip(levels, levels[1:])
        ]
        self.assertTrue(all(g1 < g0 for g0, g1 in zip(gaps, gaps[1:])))
        self.assertGreater(order_regression(levels[:-1], gaps), 0.8)

    def test_time_averages(self) -> None:
        results = run_coupled_paths(self.ensemble())
        for r in results:
            for h, avg in r.time_averages['x'].items():
                self.assertTrue(math.isfinite(avg))
            self.assertEqual(r.max_newton_iters.keys(), r.terminal.keys())

    def test_invalid_configs(self) -> None:
        with self.assertRaises(ValueError):
            self.ensemble(levels=(0.125, 0.05))
        with self.assertRaises(ValueError):
            self.ensemble(T=0.3)
        with self.assertRaises(ValueError):
            self.ensemble(initial_state=np.ones(4))
        with self.assertRaises(ValueError):
            self.ensemble(n_paths=0)
        with self.assertRaises(ValueError):
            self.ensemble(levels=(0.5, 0.25, 0.125))


class LinearOracleTest(unittest.TestCase):
    '''
    With U = x^2/2 the lifted system is linear, so the mean obeys
    m' = A m exactly and the scheme's ensemble mean can be checked
    against expm(A T).
    '''

    def test_mean_matches_matrix_exponential(self) -> None:
        params = ModelParams.create(
            gamma=5.0, k=3, alpha=3.0, lam=2.0,
            potential=PotentialSpec.from_coefficients(
                [0.0, 0.0, 0.5], allow_degenerate=True
            )
        )
        A = np.column_stack([drift(params, e) for e in np.eye(params.dim)])
        T = 1.0
        y0 = np.array([1.0, 0.5, -0.5, 0.0, 2.0])
        exact = linalg.expm(A * T) @ y0

        cfg = EnsembleConfig(
            params=params,
            n_paths=2000,
            T=T,
            levels=(1.0 / 32.0, 1.0 / 64.0),
            master_seed=5,
            initial_state=y0,
            override_hstar=True
        )
        y = terminals(run_coupled_paths(cfg), 1.0 / 64.0)
        mean = y.mean(axis=0)
        se = y.std(axis=0, ddof=1) / math.sqrt(len(y))
        np.testing.assert_array_less(np.abs(mean - exact), 5.0 * se + 0.03)


class ChainTest(unittest.TestCase):
    def setUp(self) -> None:
        self.params = reference_params()

    def chain(self, **kwargs) -> ChainConfig:
        base = dict(
            params=self.params,
            h=0.125,
            n_steps=20,
            n_paths=6,
            master_seed=9,
            initial_state=ONES,
            block_size=4
        )
        base.update(kwargs)
        return ChainConfig(**base)

    def test_records(self) -> None:
        cfg = self.chain(observables=('x', 'one'), record_every=8,
                         snapshot_steps=(20, 0, 10), trajectory_stride=5)
        np.testing.assert_array_equal(cfg.record_steps, [8, 16, 20])
        np.testing.assert_array_equal(cfg.trajectory_steps, [0, 5, 10, 15, 20])
        res = run_chain(cfg)
        self.assertEqual(res.time_averages['x'].shape, (3, 6))
        np.testing.assert_allclose(res.time_averages['one'], 1.0)
        self.assertEqual(sorted(res.snapshots), [0, 10, 20])
        np.testing.assert_array_equal(res.snapshots[0], np.tile(ONES, (6, 1)))
        np.testing.assert_array_equal(res.trajectory[-1], res.snapshots[20])
        self.assertEqual(res.n_diverged, 0)

    def test_executor_independence(self) -> None:
        cfg = self.chain(observables=('v',), snapshot_steps=(20,))
        serial = run_chain(cfg)
        with ThreadPoolExecutor(max_workers=2) as pool:
            pooled = run_chain(cfg, pool)
        np.testing.assert_array_equal(serial.snapshots[20],
                                      pooled.snapshots[20])
        np.testing.assert_array_equal(serial.time_averages['v'],
                                      pooled.time_averages['v'])

    def test_path_offset_selects_streams(self) -> None:
        full = run_chain(self.chain(snapshot_steps=(20,)))
        tail = run_chain(self.chain(snapshot_steps=(20,), n_paths=2,
                                    path_offset=4))
        np.testing.assert_allclose(tail.snapshots[20], full.snapshots[20][4:],
                                   rtol=1e-13, atol=1e-14)

    def test_malliavin_tracking(self) -> None:
        res = run_chain(self.chain(track_malliavin=True))
        self.assertEqual(res.lambda_min.shape, (20, 6))
        self.assertTrue(np.all(res.lambda_min[1:] > 0.0))
        self.assertTrue(np.all(res.det_values > 1.0 - 1e-12))
        self.assertLess(res.det_residual, 1e-10)

    def test_em_scheme(self) -> None:
        res = run_chain(self.chain(scheme='em', h=0.5, n_steps=4,
                                   trajectory_stride=1))
        self.assertEqual(res.trajectory.shape, (5, 6, 5))
        with self.assertRaises(ValueError):
            self.chain(scheme='em', track_malliavin=True)

    def test_em_divergence(self) -> None:
        y0 = np.array([0.0, 0.0, 0.0, 0.0, 10.0])
        res = run_chain(self.chain(scheme='em', h=0.1, n_steps=50,
                                   initial_state=y0, trajectory_stride=1,
                                   override_hstar=True))
        self.assertEqual(res.n_diverged, 6)
        self.assertTrue(np.all((res.diverged_at >= 1)
                               & (res.diverged_at <= 50)))
        for p, n in enumerate(res.diverged_at):
            self.assertFalse(np.any(res.trajectory_diverged[:n, p]))
            self.assertTrue(np.all(res.trajectory_diverged[n:, p]))

    def test_invalid_configs(self) -> None:
        with self.assertRaises(ValueError):
            self.chain(scheme='rk4')
        with self.assertRaises(ValueError):
            self.chain(snapshot_steps=(21,))
        with self.assertRaises(ValueError):
            self.chain(n_steps=0)
        with self.assertRaises(ValueError):
            self.chain(h=0.5)


if __name__ == '__main__':
    unittest.main()
