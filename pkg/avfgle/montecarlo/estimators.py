# Copyright (c) 2026. All rights reserved.

from dataclasses import dataclass
import math
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from avfgle.integrator import (
    NoiseBlock, StepperConfig, sample_noise, split_step
)
from avfgle.model import VALUE_ERR_MSG
from avfgle.montecarlo.ensemble import PathResult
from avfgle.observables import shifted_hamiltonian

MIN_COMMON_PATHS = 100
BOOTSTRAP_RESAMPLES = 200

ERROR_TABLE_HEADER = (
    'h', 'strong_error', 'strong_order', 'weak_error', 'weak_order',
    'n_effective', 'strong_std_error', 'weak_std_error', 'n_diverged'
)


class InsufficientPaths(ValueError):
    def __init__(self, n_common: int, required: int) -> None:
        super().__init__(
            'only {} common non-diverged paths, need {}'.format(
                n_common, required
            )
        )
        self.n_common = n_common
        self.required = required


class Estimate(NamedTuple):
    value: float
    std_error: float
    n_effective: int


def _default_rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


def bootstrap_std_error(
    values: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    rng: Optional[np.random.Generator] = None,
    n_resamples: int = BOOTSTRAP_RESAMPLES
) -> float:
    '''Nonparametric bootstrap over the first axis of `values`.'''
    values = np.asarray(values)
    n = values.shape[0]
    if n < 2:
        return math.nan
    rng = _default_rng(rng)
    replicates = np.array([
        statistic(values[rng.integers(0, n, n)]) for _ in range(n_resamples)
    ])
    return float(np.std(replicates, ddof=1))


def common_terminals(
    results: Sequence[PathResult],
    level_pair: Tuple[float, float],
    min_paths: int = MIN_COMMON_PATHS
) -> Tuple[np.ndarray, np.ndarray, int]:
    '''
    Terminal states of both levels on the paths where neither diverged,
    plus the number of paths excluded.
    '''
    h_a, h_b = level_pair
    pairs = [
        (r.terminal[h_a], r.terminal[h_b]) for r in results
        if not r.diverged[h_a] and not r.diverged[h_b]
    ]
    if len(pairs) < min_paths:
        raise InsufficientPaths(len(pairs), min_paths)
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    return a, b, len(results) - len(pairs)


def _rms(sq_norms: np.ndarray) -> float:
    return float(math.sqrt(np.mean(sq_norms)))


def strong_error(
    results: Sequence[PathResult],
    level_pair: Tuple[float, float],
    rng: Optional[np.random.Generator] = None,
    min_paths: int = MIN_COMMON_PATHS,
    n_resamples: int = BOOTSTRAP_RESAMPLES
) -> Estimate:
    '''(1/M sum_j |Y_h(T, w_j) - Y_{h/2}(T, w_j)|^2)^{1/2}'''
    a, b, _ = common_terminals(results, level_pair, min_paths)
    sq = np.sum((a - b) ** 2, axis=-1)
    return Estimate(
        _rms(sq), bootstrap_std_error(sq, _rms, rng, n_resamples), sq.size
    )


def _abs_mean(d: np.ndarray) -> float:
    return float(abs(np.mean(d)))


def weak_error(
    results: Sequence[PathResult],
    level_pair: Tuple[float, float],
    g: Callable[[np.ndarray], np.ndarray],
    rng: Optional[np.random.Generator] = None,
    min_paths: int = MIN_COMMON_PATHS,
    n_resamples: int = BOOTSTRAP_RESAMPLES
) -> Estimate:
    '''|1/M sum_j g(Y_h(T, w_j)) - g(Y_{h/2}(T, w_j))|'''
    a, b, _ = common_terminals(results, level_pair, min_paths)
    d = np.asarray(g(a), dtype=float) - np.asarray(g(b), dtype=float)
    return Estimate(
        _abs_mean(d), bootstrap_std_error(d, _abs_mean, rng, n_resamples),
        d.size
    )


def successive_orders(errors: Sequence[float]) -> List[Optional[float]]:
    '''log2(Err_i / Err_{i+1}); the last entry has no successor.'''
    orders: List[Optional[float]] = []
    for e, e_next in zip(errors, errors[1:]):
        if e > 0 and e_next > 0:
            orders.append(math.log2(e / e_next))
        else:
            orders.append(None)
    orders.append(None)
    return orders


def order_regression(hs: Sequence[float], errors: Sequence[float]) -> float:
    '''Least-squares slope of log2 Err against log2 h.'''
    hs_arr = np.asarray(hs, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = err > 0
    if np.count_nonzero(keep) < 2:
        raise ValueError(VALUE_ERR_MSG.format('errors', list(errors)))
    slope, _ = np.polyfit(np.log2(hs_arr[keep]), np.log2(err[keep]), 1)
    return float(slope)


@dataclass(frozen=True)
class ErrorRow:
    h: float
    strong_error: float
    strong_order: Optional[float]
    weak_error: float
    weak_order: Optional[float]
    n_effective: int
    strong_std_error: float
    weak_std_error: float
    n_diverged: int

    def to_row(self) -> Tuple:
        return tuple(getattr(self, name) for name in ERROR_TABLE_HEADER)


@dataclass(frozen=True)
class ErrorTable:
    rows: Tuple[ErrorRow, ...]

    header = ERROR_TABLE_HEADER

    @property
    def hs(self) -> List[float]:
        return [r.h for r in self.rows]

    def strong_slope(self) -> float:
        return order_regression(self.hs, [r.strong_error for r in self.rows])

    def weak_slope(self) -> float:
        return order_regression(self.hs, [r.weak_error for r in self.rows])

    def mean_weak_order(self) -> float:
        orders = [r.weak_order for r in self.rows if r.weak_order is not None]
        return float(np.mean(orders)) if orders else math.nan

    def to_rows(self) -> List[Tuple]:
        return [r.to_row() for r in self.rows]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> 'ErrorTable':
        return cls(tuple(
            ErrorRow(**dict(zip(ERROR_TABLE_HEADER, row))) for row in rows
        ))


def build_error_table(
    results: Sequence[PathResult],
    levels: Sequence[float],
    g: Callable[[np.ndarray], np.ndarray],
    rng: Optional[np.random.Generator] = None,
    min_paths: int = MIN_COMMON_PATHS,
    n_resamples: int = BOOTSTRAP_RESAMPLES
) -> ErrorTable:
    '''
    One row per coarse level h_i, comparing h_i with h_{i+1}; the finest
    level has no partner and gets no row.
    '''
    if len(levels) < 2:
        raise ValueError('need at least 2 levels for an error table')
    rng = _default_rng(rng)
    strong: List[Estimate] = []
    weak: List[Estimate] = []
    excluded: List[int] = []
    for pair in zip(levels, levels[1:]):
        strong.append(strong_error(results, pair, rng, min_paths,
                                   n_resamples))
        weak.append(weak_error(results, pair, g, rng, min_paths,
                               n_resamples))
        excluded.append(common_terminals(results, pair, min_paths)[2])
    strong_orders = successive_orders([e.value for e in strong])
    weak_orders = successive_orders([e.value for e in weak])
    return ErrorTable(tuple(
        ErrorRow(
            h=h,
            strong_error=s.value,
            strong_order=so,
            weak_error=w.value,
            weak_order=wo,
            n_effective=s.n_effective,
            strong_std_error=s.std_error,
            weak_std_error=w.std_error,
            n_diverged=n_excluded
        )
        for h, s, so, w, wo, n_excluded in zip(
            levels, strong, strong_orders, weak, weak_orders, excluded
        )
    ))


def temporal_average(values: np.ndarray, burn_in: int = 0) -> np.ndarray:
    '''
    Running mean, from row `burn_in` on, of the ensemble means of g(Y_n)
    over recorded steps. `values` has shape (n_rows,) or (n_rows, n_paths);
    NaN entries (diverged paths) are left out of the ensemble mean.
    '''
    values = np.asarray(values, dtype=float)
    if not 0 <= burn_in < values.shape[0]:
        raise ValueError(VALUE_ERR_MSG.format('burn_in', burn_in))
    means = values if values.ndim == 1 else np.nanmean(values, axis=1)
    tail = means[burn_in:]
    return np.cumsum(tail) / np.arange(1, tail.size + 1)


def path_average_summary(
    averages: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    '''
    Ensemble mean and standard error of per-path time averages shaped
    (n_records, n_paths).
    '''
    averages = np.asarray(averages, dtype=float)
    n = np.sum(np.isfinite(averages), axis=-1)
    mean = np.nanmean(averages, axis=-1)
    std_error = np.nanstd(averages, axis=-1, ddof=1) / np.sqrt(n)
    return mean, std_error


def stationarity_variation(series: np.ndarray, start: int = 0) -> float:
    '''(max - min) / |mean| of `series[start:]`.'''
    tail = np.asarray(series, dtype=float)[start:]
    if tail.size == 0:
        raise ValueError(VALUE_ERR_MSG.format('start', start))
    return float((np.max(tail) - np.min(tail)) / abs(np.mean(tail)))


class LyapunovFit(NamedTuple):
    alpha: float
    beta: float
    max_residual: float


def lyapunov_drift(
    cfg: StepperConfig,
    starts: np.ndarray,
    rng: np.random.Generator,
    n_inner: int = 200
) -> LyapunovFit:
    '''
    Fits E[V(Y_{n+1}) | Y_n = y] ~ alpha V(y) + beta for V = H + C_H by
    one-step conditional Monte Carlo from every start state.
    '''
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[0] < 2 or n_inner < 1:
        raise ValueError(VALUE_ERR_MSG.format('starts/n_inner',
                                              (starts.shape, n_inner)))
    V0 = shifted_hamiltonian(starts, cfg.params)
    V1 = np.empty(starts.shape[0])
    for i, y in enumerate(starts):
        batch = np.tile(y, (n_inner, 1))
        noise: NoiseBlock = sample_noise(cfg, rng, n_inner)
        y_next = split_step(batch, noise, cfg).y_next
        V1[i] = np.mean(shifted_hamiltonian(y_next, cfg.params))
    alpha, beta = np.polyfit(V0, V1, 1)
    residual = V1 - (alpha * V0 + beta)
    return LyapunovFit(float(alpha), float(beta),
                       float(np.max(np.abs(residual))))
