# Copyright (c) 2026. All rights reserved.

'''
Ensemble drivers.

`run_coupled_paths` evolves every path at every level of a dyadic
step-size ladder on the same Brownian functional: noise is drawn at the
finest level and coarsened pairwise with `coarsen_noise`. `run_chain`
evolves one level for long horizons and accumulates temporal averages,
snapshots, trajectories and Malliavin diagnostics.

Paths are processed in blocks of fixed size; blocks are mapped with an
optional executor and reassembled in path order, so results do not depend
on the worker count.
'''

from dataclasses import dataclass, field
from itertools import repeat
from concurrent.futures import Executor
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from avfgle.integrator import (
    NoiseBlock, StepRecord, StepperConfig, coarsen_noise, em_step,
    is_diverged, split_step
)
from avfgle.malliavin import (
    MalliavinEnsembleState, covariance_step, jacobians, min_eigenvalue
)
from avfgle.model import ModelParams, VALUE_ERR_MSG
from avfgle.montecarlo.rng import CHUNK_STEPS, normals_for_paths
from avfgle.observables import resolve_observable

DEFAULT_BLOCK_SIZE = 250

SCHEMES = ('avf', 'em')


def _steps(T: float, h: float) -> int:
    n = T / h
    if not (abs(n - round(n)) <= 1e-9 * max(1.0, n) and round(n) >= 1):
        raise ValueError('T = {} is not a multiple of h = {}'.format(T, h))
    return int(round(n))


def _initial(params: ModelParams, initial_state) -> np.ndarray:
    y0 = np.asarray(initial_state, dtype=float)
    if y0.shape != (params.dim,) or not np.all(np.isfinite(y0)):
        raise ValueError(VALUE_ERR_MSG.format('initial_state', initial_state))
    return y0


@dataclass(frozen=True, eq=False)
class EnsembleConfig:
    params: ModelParams
    n_paths: int
    T: float
    levels: Tuple[float, ...]
    master_seed: int
    initial_state: np.ndarray
    observables: Tuple[str, ...] = ()
    zero_noise: bool = False
    override_hstar: bool = False
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    predictor: str = 'none'
    block_size: int = DEFAULT_BLOCK_SIZE
    steppers: Tuple[StepperConfig, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError(VALUE_ERR_MSG.format('n_paths', self.n_paths))
        if not self.T > 0:
            raise ValueError(VALUE_ERR_MSG.format('T', self.T))
        if self.block_size < 1:
            raise ValueError(
                VALUE_ERR_MSG.format('block_size', self.block_size)
            )
        levels = tuple(float(h) for h in self.levels)
        if not levels:
            raise ValueError(VALUE_ERR_MSG.format('levels', self.levels))
        for coarse, fine in zip(levels, levels[1:]):
            if abs(coarse - 2.0 * fine) > 1e-12 * coarse:
                raise ValueError(
                    'levels must halve consecutively: {}'.format(levels)
                )
        for h in levels:
            _steps(self.T, h)
        object.__setattr__(self, 'levels', levels)
        object.__setattr__(
            self, 'initial_state', _initial(self.params, self.initial_state)
        )
        for name in self.observables:
            resolve_observable(name, self.params)
        object.__setattr__(self, 'steppers', tuple(
            StepperConfig(
                params=self.params,
                h=h,
                newton_tol=self.newton_tol,
                newton_max_iter=self.newton_max_iter,
                predictor=self.predictor,
                override_hstar=self.override_hstar
            )
            for h in levels
        ))


@dataclass
class PathResult:
    path_index: int
    terminal: Dict[float, Optional[np.ndarray]]
    diverged: Dict[float, bool]
    mean_newton_iters: Dict[float, float]
    max_newton_iters: Dict[float, int]
    fallback_steps: Dict[float, int]
    time_averages: Dict[str, Dict[float, float]] = field(default_factory=dict)


class _LevelTracker:
    def __init__(self, y0: np.ndarray, n_paths: int, names: Sequence[str]):
        self.y = np.tile(y0, (n_paths, 1))
        self.alive = np.ones(n_paths, dtype=bool)
        self.iters_sum = np.zeros(n_paths)
        self.iters_max = np.zeros(n_paths, dtype=int)
        self.fallbacks = np.zeros(n_paths, dtype=int)
        self.steps = 0
        self.sums = {name: np.zeros(n_paths) for name in names}

    def advance(
        self,
        g: np.ndarray,
        cfg: StepperConfig
    ) -> Tuple[np.ndarray, StepRecord]:
        rows = np.flatnonzero(self.alive)
        rec = split_step(self.y[rows], NoiseBlock(g[rows]), cfg, strict=False)
        self.y[rows] = rec.y_next
        bad = ~rec.converged | is_diverged(rec.y_next)
        self.alive[rows[bad]] = False
        self.iters_sum[rows] += rec.newton_iters
        self.iters_max[rows] = np.maximum(self.iters_max[rows],
                                          rec.newton_iters)
        self.fallbacks[rows] += rec.fallback
        self.steps += 1
        return rows, rec

    def accumulate(self, observables: Dict) -> None:
        rows = np.flatnonzero(self.alive)
        for name, fn in observables.items():
            self.sums[name][rows] += fn(self.y[rows])


def _coupled_block(
    cfg: EnsembleConfig,
    start: int,
    stop: int
) -> List[PathResult]:
    steppers = cfg.steppers
    fine = steppers[-1]
    n_levels = len(steppers)
    n_fine = _steps(cfg.T, fine.h)
    chunk = max(CHUNK_STEPS, 2 ** (n_levels - 1))
    paths = range(start, stop)
    width = fine.k + 1
    observables = {
        name: resolve_observable(name, cfg.params) for name in cfg.observables
    }
    trackers = [
        _LevelTracker(cfg.initial_state, len(paths), cfg.observables)
        for _ in steppers
    ]

    for c, offset in enumerate(range(0, n_fine, chunk)):
        m = min(chunk, n_fine - offset)
        if cfg.zero_noise:
            g = np.zeros((len(paths), m, width))
        else:
            g = normals_for_paths(cfg.master_seed, paths, c, m, width)
            g = g * fine.sigma
        noise = [g]
        for i in range(n_levels - 2, -1, -1):
            finer = noise[0]
            noise.insert(0, coarsen_noise(
                NoiseBlock(finer[:, 0::2]), NoiseBlock(finer[:, 1::2]),
                steppers[i + 1], steppers[i]
            ).g)
        for tracker, stepper, level_noise in zip(trackers, steppers, noise):
            for s in range(level_noise.shape[1]):
                tracker.advance(level_noise[:, s], stepper)
                if observables:
                    tracker.accumulate(observables)

    results = []
    for j, path in enumerate(paths):
        terminal: Dict[float, Optional[np.ndarray]] = {}
        diverged: Dict[float, bool] = {}
        mean_iters: Dict[float, float] = {}
        max_iters: Dict[float, int] = {}
        fallbacks: Dict[float, int] = {}
        averages: Dict[str, Dict[float, float]] = {
            name: {} for name in cfg.observables
        }
        for tracker, stepper in zip(trackers, steppers):
            h = stepper.h
            alive = bool(tracker.alive[j])
            terminal[h] = tracker.y[j].copy() if alive else None
            diverged[h] = not alive
            mean_iters[h] = float(tracker.iters_sum[j] / tracker.steps)
            max_iters[h] = int(tracker.iters_max[j])
            fallbacks[h] = int(tracker.fallbacks[j])
            for name in cfg.observables:
                averages[name][h] = (
                    float(tracker.sums[name][j] / tracker.steps)
                    if alive else math.nan
                )
        results.append(PathResult(
            path_index=path,
            terminal=terminal,
            diverged=diverged,
            mean_newton_iters=mean_iters,
            max_newton_iters=max_iters,
            fallback_steps=fallbacks,
            time_averages=averages
        ))
    return results


def _blocks(n_paths: int, block_size: int) -> Tuple[List[int], List[int]]:
    starts = list(range(0, n_paths, block_size))
    stops = [min(s + block_size, n_paths) for s in starts]
    return starts, stops


def run_coupled_paths(
    cfg: EnsembleConfig,
    executor: Optional[Executor] = None
) -> List[PathResult]:
    starts, stops = _blocks(cfg.n_paths, cfg.block_size)
    mapper = executor.map if executor is not None else map
    results: List[PathResult] = []
    for block in mapper(_coupled_block, repeat(cfg), starts, stops):
        results.extend(block)
    return results


@dataclass(frozen=True, eq=False)
class ChainConfig:
    params: ModelParams
    h: float
    n_steps: int
    n_paths: int
    master_seed: int
    initial_state: np.ndarray
    observables: Tuple[str, ...] = ()
    record_every: int = 1
    snapshot_steps: Tuple[int, ...] = ()
    trajectory_stride: int = 0
    scheme: str = 'avf'
    track_malliavin: bool = False
    path_offset: int = 0
    zero_noise: bool = False
    override_hstar: bool = False
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    predictor: str = 'none'
    block_size: int = DEFAULT_BLOCK_SIZE
    stepper: StepperConfig = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ('n_steps', 'n_paths', 'record_every', 'block_size'):
            if getattr(self, name) < 1:
                raise ValueError(
                    VALUE_ERR_MSG.format(name, getattr(self, name))
                )
        if self.trajectory_stride < 0 or self.path_offset < 0:
            raise ValueError(VALUE_ERR_MSG.format(
                'stride/offset', (self.trajectory_stride, self.path_offset)
            ))
        if self.scheme not in SCHEMES:
            raise ValueError(VALUE_ERR_MSG.format('scheme', self.scheme))
        if self.track_malliavin and self.scheme != 'avf':
            raise ValueError('Malliavin tracking needs the AVF scheme')
        bad_snapshots = [s for s in self.snapshot_steps
                         if not 0 <= s <= self.n_steps]
        if bad_snapshots:
            raise ValueError(VALUE_ERR_MSG.format('snapshot_steps',
                                                  bad_snapshots))
        object.__setattr__(
            self, 'initial_state', _initial(self.params, self.initial_state)
        )
        object.__setattr__(
            self, 'snapshot_steps', tuple(sorted(set(self.snapshot_steps)))
        )
        for name in self.observables:
            resolve_observable(name, self.params)
        object.__setattr__(self, 'stepper', StepperConfig(
            params=self.params,
            h=self.h,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            predictor=self.predictor,
            override_hstar=self.override_hstar or self.scheme == 'em'
        ))

    @property
    def record_steps(self) -> np.ndarray:
        steps = np.arange(self.record_every, self.n_steps + 1,
                          self.record_every)
        if steps.size == 0 or steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps

    @property
    def trajectory_steps(self) -> np.ndarray:
        if self.trajectory_stride == 0:
            return np.zeros(0, dtype=int)
        return np.arange(0, self.n_steps + 1, self.trajectory_stride)


@dataclass
class ChainResult:
    '''
    Per-path outputs; the last axis of every array runs over paths (the
    second for `trajectory`). Row r of `time_averages`/`instant_values`
    belongs to `record_steps[r]`; row i of `lambda_min` is
    lambda_min(gamma_{i+1}) and row i of `det_values` the closed-form
    det(dG/dYbar) of step i.
    '''

    alive: np.ndarray
    diverged_at: np.ndarray
    time_averages: Dict[str, np.ndarray]
    instant_values: Dict[str, np.ndarray]
    snapshots: Dict[int, np.ndarray]
    trajectory: np.ndarray
    trajectory_diverged: np.ndarray
    lambda_min: np.ndarray
    det_values: np.ndarray
    det_residual: float
    mean_newton_iters: np.ndarray
    fallback_steps: np.ndarray

    @property
    def n_diverged(self) -> int:
        return int(np.sum(~self.alive))


def _chain_block(cfg: ChainConfig, start: int, stop: int) -> ChainResult:
    st = cfg.stepper
    nb = stop - start
    paths = range(cfg.path_offset + start, cfg.path_offset + stop)
    width = st.k + 1
    observables = {
        name: resolve_observable(name, cfg.params) for name in cfg.observables
    }
    record_steps = cfg.record_steps
    record_index = {int(s): r for r, s in enumerate(record_steps)}
    traj_steps = cfg.trajectory_steps
    traj_index = {int(s): r for r, s in enumerate(traj_steps)}
    snapshot_set = set(cfg.snapshot_steps)

    tracker = _LevelTracker(cfg.initial_state, nb, cfg.observables)
    diverged_at = np.full(nb, -1, dtype=int)
    averages = {
        name: np.full((record_steps.size, nb), np.nan) for name in observables
    }
    instant = {
        name: np.full((record_steps.size, nb), np.nan) for name in observables
    }
    snapshots: Dict[int, np.ndarray] = {}
    trajectory = np.full((traj_steps.size, nb, st.dim), np.nan)
    trajectory_diverged = np.zeros((traj_steps.size, nb), dtype=bool)
    if cfg.track_malliavin:
        covariance = MalliavinEnsembleState.initial(st, nb)
        lambda_min = np.full((cfg.n_steps, nb), np.nan)
        det_values = np.full((cfg.n_steps, nb), np.nan)
    else:
        lambda_min = np.zeros((0, nb))
        det_values = np.zeros((0, nb))
    det_residual = 0.0

    def record(n: int) -> None:
        if n in snapshot_set:
            snapshots[n] = np.where(tracker.alive[:, None], tracker.y, np.nan)
        if n in traj_index:
            trajectory[traj_index[n]] = tracker.y
            trajectory_diverged[traj_index[n]] = ~tracker.alive

    record(0)
    n = 0
    for c, offset in enumerate(range(0, cfg.n_steps, CHUNK_STEPS)):
        m = min(CHUNK_STEPS, cfg.n_steps - offset)
        if cfg.zero_noise:
            normals = np.zeros((nb, m, width))
        else:
            normals = normals_for_paths(cfg.master_seed, paths, c, m, width)
        for s in range(m):
            before = tracker.alive.copy()
            if cfg.scheme == 'em':
                rows = np.flatnonzero(tracker.alive)
                y_next, bad = em_step(
                    tracker.y[rows], normals[rows, s] * math.sqrt(st.h), st
                )
                tracker.y[rows] = y_next
                tracker.alive[rows[bad]] = False
                tracker.steps += 1
            else:
                y_prev = tracker.y.copy()
                rows, rec = tracker.advance(normals[:, s] * st.sigma, st)
                if cfg.track_malliavin:
                    live = tracker.alive[rows]
                    rows_ok = rows[live]
                    jac = jacobians(rec.y_bar[live], y_prev[rows_ok], st)
                    updated = covariance_step(
                        MalliavinEnsembleState(covariance.gamma_n[rows_ok],
                                               covariance.n),
                        jac, st
                    )
                    gamma = covariance.gamma_n.copy()
                    gamma[rows_ok] = updated.gamma_n
                    covariance = MalliavinEnsembleState(gamma, updated.n)
                    lambda_min[n, rows_ok] = min_eigenvalue(updated.gamma_n)
                    det_values[n, rows_ok] = jac.det_dG_dYbar
                    numeric = np.linalg.det(jac.dG_dYbar)
                    if numeric.size:
                        det_residual = max(det_residual, float(np.max(
                            np.abs(numeric - jac.det_dG_dYbar)
                            / np.abs(numeric)
                        )))
            n += 1
            diverged_at[before & ~tracker.alive] = n
            if observables:
                tracker.accumulate(observables)
                if n in record_index:
                    r = record_index[n]
                    live = np.flatnonzero(tracker.alive)
                    for name, fn in observables.items():
                        averages[name][r, live] = tracker.sums[name][live] / n
                        instant[name][r, live] = fn(tracker.y[live])
            record(n)

    return ChainResult(
        alive=tracker.alive,
        diverged_at=diverged_at,
        time_averages=averages,
        instant_values=instant,
        snapshots=snapshots,
        trajectory=trajectory,
        trajectory_diverged=trajectory_diverged,
        lambda_min=lambda_min,
        det_values=det_values,
        det_residual=det_residual,
        mean_newton_iters=tracker.iters_sum / max(1, tracker.steps),
        fallback_steps=tracker.fallbacks
    )


def _concat_chain(parts: Iterable[ChainResult]) -> ChainResult:
    parts = list(parts)
    first = parts[0]
    return ChainResult(
        alive=np.concatenate([p.alive for p in parts]),
        diverged_at=np.concatenate([p.diverged_at for p in parts]),
        time_averages={
            name: np.concatenate([p.time_averages[name] for p in parts],
                                 axis=1)
            for name in first.time_averages
        },
        instant_values={
            name: np.concatenate([p.instant_values[name] for p in parts],
                                 axis=1)
            for name in first.instant_values
        },
        snapshots={
            step: np.concatenate([p.snapshots[step] for p in parts])
            for step in first.snapshots
        },
        trajectory=np.concatenate([p.trajectory for p in parts], axis=1),
        trajectory_diverged=np.concatenate(
            [p.trajectory_diverged for p in parts], axis=1
        ),
        lambda_min=np.concatenate([p.lambda_min for p in parts], axis=1),
        det_values=np.concatenate([p.det_values for p in parts], axis=1),
        det_residual=max(p.det_residual for p in parts),
        mean_newton_iters=np.concatenate([p.mean_newton_iters for p in parts]),
        fallback_steps=np.concatenate([p.fallback_steps for p in parts])
    )


def run_chain(
    cfg: ChainConfig,
    executor: Optional[Executor] = None
) -> ChainResult:
    starts, stops = _blocks(cfg.n_paths, cfg.block_size)
    mapper = executor.map if executor is not None else map
    return _concat_chain(mapper(_chain_block, repeat(cfg), starts, stops))
