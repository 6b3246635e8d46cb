# Copyright (c) 2026. All rights reserved.

'''
GLE model: confining polynomial potential, parameters of the lifted
quasi-Markovian system, its Hamiltonians and the Gibbs-Boltzmann reference
measure pi ~ exp(-H0) used as the ergodic-limit oracle.

States are handled as arrays whose last axis is (v, z_1..z_k, x); the
`State` type is the named single-state view of that layout.
'''

from dataclasses import dataclass, field
from functools import cached_property
import math
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import legendre
from numpy.polynomial import polynomial as poly
from scipy import integrate

VALUE_ERR_MSG = '{} has invalid value {}'

DOUBLE_WELL = (0.0, 0.0, -0.5, 0.0, 0.25)

POTENTIAL_PRESETS: Mapping[str, Tuple[Sequence[float], float]] = {
    # name: (ascending coefficients, hessian lower bound K)
    'double_well': (DOUBLE_WELL, 1.0),
}

HESSIAN_CHECK_POINTS = 10_000
HESSIAN_CHECK_SLACK = 1e-8

GIBBS_TABLE_NODES = 2 ** 14
GIBBS_TAIL_TOLERANCE = 1e-12
GIBBS_MIN_SAMPLES = 10_000


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class State:
    v: float
    z: Tuple[float, ...]
    x: float

    @classmethod
    def from_array(cls, y: np.ndarray) -> 'State':
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size < 3:
            raise ValueError(VALUE_ERR_MSG.format('state', y))
        return cls(v=float(y[0]), z=tuple(float(c) for c in y[1:-1]),
                   x=float(y[-1]))

    @property
    def k(self) -> int:
        return len(self.z)

    def to_array(self) -> np.ndarray:
        return np.array([self.v, *self.z, self.x], dtype=float)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_array())))


StateLike = Union[State, np.ndarray, Sequence[float]]


def as_state_array(s: StateLike) -> np.ndarray:
    if isinstance(s, State):
        return s.to_array()
    return np.asarray(s, dtype=float)


def split_state(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return y[..., 0], y[..., 1:-1], y[..., -1]


def _hessian_minimum(hess_coeffs: np.ndarray) -> float:
    if len(hess_coeffs) == 1:
        return float(hess_coeffs[0])
    roots = poly.polyroots(poly.polyder(hess_coeffs))
    real = roots[np.abs(roots.imag) < 1e-9].real
    if real.size == 0:
        return math.inf
    return float(np.min(poly.polyval(real, hess_coeffs)))


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    '''
    Univariate polynomial potential U with ascending coefficients, even
    degree 2m >= 4 (degree 2 only with `allow_degenerate`) and positive
    leading coefficient; `hessian_lower_bound` is K with U'' >= -K.
    '''

    coefficients: np.ndarray
    hessian_lower_bound: float
    allow_degenerate: bool = False
    gradient_coefficients: np.ndarray = field(init=False, repr=False)
    hessian_coefficients: np.ndarray = field(init=False, repr=False)
    quadrature: Tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)
    half_width: float = field(init=False, repr=False)
    normalizer: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        coeffs = np.trim_zeros(
            np.asarray(self.coefficients, dtype=float).ravel(), 'b'
        )
        degree = len(coeffs) - 1
        min_degree = 2 if self.allow_degenerate else 4
        if degree < min_degree or degree % 2 != 0:
            raise ValueError(VALUE_ERR_MSG.format('potential degree', degree))
        if not np.all(np.isfinite(coeffs)) or coeffs[-1] <= 0:
            raise ValueError(
                VALUE_ERR_MSG.format('leading coefficient', coeffs[-1])
            )
        K = float(self.hessian_lower_bound)
        if not (math.isfinite(K) and K >= 0):
            raise ValueError(VALUE_ERR_MSG.format('hessian_lower_bound', K))

        setattr_ = object.__setattr__
        setattr_(self, 'coefficients', coeffs)
        setattr_(self, 'hessian_lower_bound', K)
        setattr_(self, 'gradient_coefficients', poly.polyder(coeffs))
        setattr_(self, 'hessian_coefficients', poly.polyder(coeffs, 2))

        # Gauss-Legendre on [0, 1], exact for the weighted Hessian integrals
        nodes, weights = legendre.leggauss(max(1, math.ceil(degree / 2)))
        setattr_(self, 'quadrature', (0.5 * (nodes + 1.0), 0.5 * weights))

        normalizer, half_width = _gibbs_truncation(coeffs)
        setattr_(self, 'normalizer', normalizer)
        setattr_(self, 'half_width', half_width)

        grid = np.linspace(-half_width, half_width, HESSIAN_CHECK_POINTS)
        observed = float(np.min(self.hessian(grid)))
        if observed < -K - HESSIAN_CHECK_SLACK:
            raise ValueError(
                'hessian_lower_bound {} violated: min U\'\' = {}'.format(
                    K, observed
                )
            )

    @classmethod
    def from_coefficients(
        cls,
        coefficients: Sequence[float],
        hessian_lower_bound: Optional[float] = None,
        allow_degenerate: bool = False,
    ) -> 'PotentialSpec':
        coeffs = np.asarray(coefficients, dtype=float)
        if hessian_lower_bound is None:
            hess_min = _hessian_minimum(
                poly.polyder(np.trim_zeros(coeffs, 'b'), 2)
            )
            hessian_lower_bound = max(0.0, -hess_min)
        return cls(coeffs, hessian_lower_bound, allow_degenerate)

    @classmethod
    def preset(cls, name: str) -> 'PotentialSpec':
        try:
            coeffs, K = POTENTIAL_PRESETS[name]
        except KeyError:
            raise ValueError(VALUE_ERR_MSG.format('potential preset', name))
        return cls(np.asarray(coeffs, dtype=float), K)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def value(self, x):
        return poly.polyval(x, self.coefficients)

    def gradient(self, x):
        return poly.polyval(x, self.gradient_coefficients)

    def hessian(self, x):
        return poly.polyval(x, self.hessian_coefficients)

    def same_as(self, other: 'PotentialSpec') -> bool:
        return (
            self.coefficients.shape == other.coefficients.shape
            and bool(np.all(self.coefficients == other.coefficients))
        )


def _gibbs_truncation(coeffs: np.ndarray) -> Tuple[float, float]:
    def weight(x: float) -> float:
        return math.exp(-poly.polyval(x, coeffs))

    z_x, _ = integrate.quad(weight, -np.inf, np.inf, epsabs=0.0,
                            epsrel=1e-13, limit=200)
    half_width = 1.0
    while max(weight(half_width), weight(-half_width)) * 2.0 * half_width \
            >= GIBBS_TAIL_TOLERANCE * z_x:
        half_width += 0.25
    return z_x, half_width


def potential_eval(p: PotentialSpec, x):
    return p.value(x), p.gradient(x), p.hessian(x)


def _divided_difference(p: PotentialSpec, a, b):
    # sum_j c_j (b^j - a^j)/(b - a) = sum_j c_j h_{j-1}(a, b), with the
    # complete homogeneous sums h_j = b h_{j-1} + a^j
    coeffs = p.coefficients
    h_prev = np.ones_like(a)
    a_pow = np.ones_like(a)
    total = coeffs[1] * h_prev
    for c in coeffs[2:]:
        a_pow = a_pow * a
        h_prev = b * h_prev + a_pow
        total = total + c * h_prev
    return total


def discrete_gradient(p: PotentialSpec, a, b):
    '''
    Chord average int_0^1 U'(a + t(b - a)) dt, i.e. (U(b) - U(a))/(b - a),
    with the midpoint value U'((a + b)/2) once |b - a| <= 1e-8 max(1,|a|,|b|).
    '''
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    eps = 1e-8 * np.maximum(1.0, np.maximum(np.abs(a_arr), np.abs(b_arr)))
    wide = np.abs(b_arr - a_arr) > eps
    out = np.where(
        wide,
        _divided_difference(p, a_arr, b_arr),
        p.gradient(0.5 * (a_arr + b_arr))
    )
    return float(out) if out.ndim == 0 else out


def f1_f2(p: PotentialSpec, a, b):
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    xi, w = p.quadrature
    points = a_arr[..., None] + xi * (b_arr - a_arr)[..., None]
    hess = p.hessian(points)
    F1 = np.sum(hess * (w * xi), axis=-1)
    F2 = np.sum(hess * (w * (1.0 - xi)), axis=-1)
    if F1.ndim == 0:
        return float(F1), float(F2)
    return F1, F2


def _as_vector(name: str, value, k: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(k, float(arr))
    if arr.shape != (k,) or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(VALUE_ERR_MSG.format(name, value))
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    gamma: float
    alpha: np.ndarray
    lam: np.ndarray
    potential: PotentialSpec

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(VALUE_ERR_MSG.format('gamma', self.gamma))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        k = alpha.size
        if k < 1:
            raise ValueError(VALUE_ERR_MSG.format('k', k))
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'alpha', _as_vector('alpha', alpha, k))
        object.__setattr__(self, 'lam', _as_vector('lambda', self.lam, k))
        if not h_star(self) > 0:
            raise ValueError(VALUE_ERR_MSG.format('h_star', h_star(self)))

    @classmethod
    def create(
        cls,
        gamma: float,
        k: int,
        alpha,
        lam,
        potential: PotentialSpec
    ) -> 'ModelParams':
        if int(k) != k or k < 1:
            raise ValueError(VALUE_ERR_MSG.format('k', k))
        return cls(
            gamma=gamma,
            alpha=_as_vector('alpha', alpha, int(k)),
            lam=_as_vector('lambda', lam, int(k)),
            potential=potential
        )

    @property
    def k(self) -> int:
        return int(self.alpha.size)

    @property
    def dim(self) -> int:
        return self.k + 2

    @cached_property
    def hamiltonian_infimum(self) -> float:
        return hamiltonian_lower_bound(self)


def reference_params() -> ModelParams:
    # gamma = 5, k = 3, alpha = 3, lambda = 2, double-well
    return ModelParams.create(
        gamma=5.0, k=3, alpha=3.0, lam=2.0,
        potential=PotentialSpec.preset('double_well')
    )


def hamiltonian_h0(params: ModelParams, s: StateLike):
    y = as_state_array(s)
    v, z, x = split_state(y)
    out = (0.5 * v * v + 0.5 * np.sum(z * z, axis=-1)
           + params.potential.value(x))
    return float(out) if np.ndim(out) == 0 else out


def hamiltonian_h(params: ModelParams, s: StateLike):
    y = as_state_array(s)
    v, _, x = split_state(y)
    out = hamiltonian_h0(params, y) + 0.5 * params.gamma * v * x
    return float(out) if np.ndim(out) == 0 else out


def hamiltonian_lower_bound(params: ModelParams) -> float:
    '''
    inf H over R^{k+2}: minimizing over v leaves U(x) - gamma^2 x^2 / 8.
    '''
    reduced = poly.polysub(
        params.potential.coefficients,
        [0.0, 0.0, params.gamma ** 2 / 8.0]
    )
    if len(np.trim_zeros(reduced, 'b')) < 3:
        raise ValueError(VALUE_ERR_MSG.format('reduced hamiltonian', reduced))
    roots = poly.polyroots(poly.polyder(reduced))
    real = roots[np.abs(roots.imag) < 1e-9].real
    return float(np.min(poly.polyval(real, reduced)))


def h_star(p: ModelParams) -> float:
    K = p.potential.hessian_lower_bound
    g = p.gamma
    return min(
        4.0 / (K + 1.0),
        float(np.min(8.0 / (g * p.lam ** 2))),
        8.0 / (2.0 * g + 2.0 * (K + 1.0) + g * p.k)
    )


@dataclass(frozen=True, eq=False)
class GibbsReference:
    '''
    Tabulated inverse CDF of the x-marginal exp(-U(x))/Z_x on [-L, L].
    '''

    potential: PotentialSpec
    nodes: np.ndarray
    cdf: np.ndarray
    normalizer: float
    tail_bound: float

    @classmethod
    def build(
        cls,
        potential: PotentialSpec,
        n_nodes: int = GIBBS_TABLE_NODES
    ) -> 'GibbsReference':
        L = potential.half_width
        nodes = np.linspace(-L, L, n_nodes)
        density = np.exp(-potential.value(nodes))
        cumulative = integrate.cumulative_simpson(density, x=nodes,
                                                  initial=0.0)
        cdf = cumulative / cumulative[-1]
        steps = np.diff(cdf)
        if not np.all(steps >= 0):
            raise ValueError('tabulated Gibbs CDF is decreasing')
        # tail increments fall below the ulp of the running sum; keep one
        # node per distinct CDF level so the inverse stays single-valued
        keep = np.concatenate(([True], steps > 0))
        nodes, cdf = nodes[keep], cdf[keep]

        def weight(x: float) -> float:
            return math.exp(-potential.value(x))

        upper, _ = integrate.quad(weight, L, np.inf)
        lower, _ = integrate.quad(weight, -np.inf, -L)
        tail = (upper + lower) / potential.normalizer
        if not tail < 1e-10:
            raise ValueError(VALUE_ERR_MSG.format('tail_bound', tail))

        return cls(
            potential=potential,
            nodes=nodes,
            cdf=cdf,
            normalizer=potential.normalizer,
            tail_bound=tail
        )

    def inverse_cdf(self, u):
        return np.interp(u, self.cdf, self.nodes)


def gibbs_sample(
    ref: GibbsReference,
    p: ModelParams,
    rng: np.random.Generator,
    n: Optional[int] = None
):
    '''
    Exact pi-samples: (v, z) standard normal, x by inverse-CDF lookup.
    Returns a `State` when `n` is None, else an (n, k+2) array.
    '''
    if not ref.potential.same_as(p.potential):
        raise ValueError('GibbsReference was built for another potential')
    size = 1 if n is None else int(n)
    y = np.empty((size, p.dim))
    y[:, :-1] = rng.standard_normal((size, p.k + 1))
    y[:, -1] = ref.inverse_cdf(rng.random(size))
    return State.from_array(y[0]) if n is None else y


Observable = Callable[[np.ndarray], np.ndarray]


def gibbs_expectation(
    ref: GibbsReference,
    p: ModelParams,
    g: Observable,
    n_samples: int,
    rng: np.random.Generator
) -> Tuple[float, float]:
    if n_samples < GIBBS_MIN_SAMPLES:
        raise ValueError(VALUE_ERR_MSG.format('n_samples', n_samples))
    samples = gibbs_sample(ref, p, rng, n_samples)
    values = np.broadcast_to(
        np.asarray(g(samples), dtype=float), (n_samples,)
    )
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise ObservableError(
            'observable is not finite at sample {} (state {})'.format(
                i, samples[i].tolist()
            )
        )
    mean = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / math.sqrt(n_samples))
    return mean, std_error
