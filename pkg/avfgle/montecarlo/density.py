# Copyright (c) 2026. All rights reserved.

'''
Densities of (v, x) samples on a regular grid: normalized histograms,
product-Gaussian kernel estimates and distances between them.
'''

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import stats

from avfgle.model import VALUE_ERR_MSG

MIN_HISTOGRAM_SAMPLES = 1000
DEFAULT_BINS = 128
DEFAULT_RANGE = ((-3.0, 3.0), (-3.0, 3.0))

KDE_BATCH = 50_000

Range2D = Tuple[Tuple[float, float], Tuple[float, float]]


@dataclass(frozen=True)
class DensityGrid:
    v_edges: np.ndarray
    x_edges: np.ndarray
    density: np.ndarray

    @property
    def v_centers(self) -> np.ndarray:
        return 0.5 * (self.v_edges[:-1] + self.v_edges[1:])

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def cell_area(self) -> np.ndarray:
        return np.outer(np.diff(self.v_edges), np.diff(self.x_edges))

    def integral(self) -> float:
        return float(np.sum(self.density * self.cell_area))

    def rows(self) -> list:
        '''(v, x, density) per cell, v-major.'''
        vv, xx = np.meshgrid(self.v_centers, self.x_centers, indexing='ij')
        return [
            (float(v), float(x), float(d))
            for v, x, d in zip(vv.ravel(), xx.ravel(), self.density.ravel())
        ]


def _vx(samples: np.ndarray) -> np.ndarray:
    # full states (n, k+2) or (n, 2) pairs of (v, x)
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] < 2:
        raise ValueError(VALUE_ERR_MSG.format('samples shape', s.shape))
    vx = s if s.shape[1] == 2 else s[:, [0, -1]]
    return vx[np.all(np.isfinite(vx), axis=1)]


def _edges(bins: int, rng: Range2D) -> Tuple[np.ndarray, np.ndarray]:
    if bins < 1:
        raise ValueError(VALUE_ERR_MSG.format('bins', bins))
    for lo, hi in rng:
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError('empty histogram range {}'.format(rng))
    return (np.linspace(rng[0][0], rng[0][1], bins + 1),
            np.linspace(rng[1][0], rng[1][1], bins + 1))


def histogram2d(
    samples: np.ndarray,
    bins: int = DEFAULT_BINS,
    range: Range2D = DEFAULT_RANGE
) -> DensityGrid:
    vx = _vx(samples)
    if vx.shape[0] < MIN_HISTOGRAM_SAMPLES:
        raise ValueError('histogram needs at least {} samples, got {}'.format(
            MIN_HISTOGRAM_SAMPLES, vx.shape[0]
        ))
    v_edges, x_edges = _edges(bins, range)
    counts, _, _ = np.histogram2d(vx[:, 0], vx[:, 1], bins=(v_edges, x_edges))
    total = np.sum(counts)
    if total == 0:
        raise ValueError('no samples fall inside the range {}'.format(range))
    area = np.outer(np.diff(v_edges), np.diff(x_edges))
    return DensityGrid(v_edges, x_edges, counts / (total * area))


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    spread = min(np.std(x), stats.iqr(x) / 1.34)
    if not spread > 0:
        spread = np.std(x)
    bw = 0.9 * spread * x.size ** (-0.2)
    # a point mass gets a narrow but positive kernel
    return float(bw) if bw > 0 else 1e-6


def _gaussian_kernel(
    grid: np.ndarray,
    data: np.ndarray,
    bw: float
) -> np.ndarray:
    u = (grid[:, None] - data[None, :]) / bw
    return np.exp(-0.5 * u * u) / (bw * np.sqrt(2.0 * np.pi))


def kde2d(
    samples: np.ndarray,
    bins: int = DEFAULT_BINS,
    range: Range2D = DEFAULT_RANGE
) -> DensityGrid:
    '''Product-Gaussian KDE evaluated at the cell centers of the grid.'''
    vx = _vx(samples)
    if vx.shape[0] == 0:
        raise ValueError('kde needs at least one finite sample')
    v_edges, x_edges = _edges(bins, range)
    grid = DensityGrid(v_edges, x_edges, np.zeros((bins, bins)))
    bw_v = silverman_bandwidth(vx[:, 0])
    bw_x = silverman_bandwidth(vx[:, 1])
    density = np.zeros((bins, bins))
    for start in np.arange(0, vx.shape[0], KDE_BATCH):
        batch = vx[start:start + KDE_BATCH]
        Kv = _gaussian_kernel(grid.v_centers, batch[:, 0], bw_v)
        Kx = _gaussian_kernel(grid.x_centers, batch[:, 1], bw_x)
        density += Kv @ Kx.T
    return DensityGrid(v_edges, x_edges, density / vx.shape[0])


def _same_grid(a: DensityGrid, b: DensityGrid) -> None:
    if not (np.array_equal(a.v_edges, b.v_edges)
            and np.array_equal(a.x_edges, b.x_edges)):
        raise ValueError('density grids differ')


def total_variation(a: DensityGrid, b: DensityGrid) -> float:
    _same_grid(a, b)
    return float(0.5 * np.sum(np.abs(a.density - b.density) * a.cell_area))


def same_law_tv_baseline(
    sampler: Callable[[int], np.ndarray],
    n_samples: int,
    bins: int = DEFAULT_BINS,
    range: Range2D = DEFAULT_RANGE,
    replicates: int = 5
) -> Tuple[float, float]:
    '''
    Mean and standard deviation of the histogram TV distance between pairs
    of independent sample sets of one law.
    '''
    if replicates < 1:
        raise ValueError(VALUE_ERR_MSG.format('replicates', replicates))
    tvs = np.array([
        total_variation(histogram2d(sampler(n_samples), bins, range),
                        histogram2d(sampler(n_samples), bins, range))
        for _ in np.arange(replicates)
    ])
    spread = float(np.std(tvs, ddof=1)) if replicates > 1 else 0.0
    return float(np.mean(tvs)), spread


def density_refinement_probe(
    samples_h: np.ndarray,
    samples_half: np.ndarray,
    bins: int = DEFAULT_BINS,
    range: Range2D = DEFAULT_RANGE
) -> float:
    '''sup over the grid of |KDE_h - KDE_{h/2}|.'''
    a = np.asarray(samples_h)
    b = np.asarray(samples_half)
    if a.shape[0] != b.shape[0]:
        raise ValueError('probe needs equal sample counts: {} != {}'.format(
            a.shape[0], b.shape[0]
        ))
    if np.array_equal(a, b):
        return 0.0
    return float(np.max(np.abs(
        kde2d(a, bins, range).density - kde2d(b, bins, range).density
    )))


def ks_standard_normal(values: Sequence[float]) -> float:
    '''p-value of the Kolmogorov-Smirnov test against N(0, 1).'''
    return float(stats.kstest(np.asarray(values, dtype=float), 'norm').pvalue)
