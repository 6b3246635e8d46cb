# Copyright (c) 2026. All rights reserved.

'''
One step of the splitting AVF method Y_{n+1} = Phi^S(Phi^D(Y_n)):

- Phi^D: implicit AVF substep of the Hamiltonian field S grad H, solved by
  Newton with the analytic Jacobian dG/dYbar, damped fixed point as fallback;
- Phi^S: exact Ornstein-Uhlenbeck flow of the linear dissipative part.

Every function accepts a single state (shape (k+2,)) or a batch of states
(shape (n, k+2)); rows never interact, so a path's result does not depend
on the batch it was computed in.
'''

from dataclasses import dataclass, field
import logging
import math
from typing import Optional, Tuple

import numpy as np

from avfgle import LOGGER_NAME
from avfgle.malliavin import dG_dYbar
from avfgle.model import (
    ModelParams, StateLike, VALUE_ERR_MSG, as_state_array, discrete_gradient,
    h_star, split_state
)
import avfgle.utils.logutils as logutils

DIVERGENCE_THRESHOLD = 1e10

PREDICTORS = ('none', 'explicit')


class NonConvergence(ArithmeticError):
    def __init__(self, iters: int, residual: float) -> None:
        super().__init__(
            'AVF substep did not converge after {} iterations '
            '(residual {:.3e})'.format(iters, residual)
        )
        self.iters = iters
        self.residual = residual


@dataclass(frozen=True, eq=False)
class StepperConfig:
    params: ModelParams
    h: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fixed_point_damping: float = 0.5
    fixed_point_max_iter: int = 400
    predictor: str = 'none'
    override_hstar: bool = False
    h_star: float = field(init=False)
    hstar_overridden: bool = field(init=False)
    decay_v: float = field(init=False)
    decay_z: np.ndarray = field(init=False)
    coupling: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        p = self.params
        h = float(self.h)
        if not (math.isfinite(h) and h > 0):
            raise ValueError(VALUE_ERR_MSG.format('h', self.h))
        if not self.newton_tol > 0:
            raise ValueError(
                VALUE_ERR_MSG.format('newton_tol', self.newton_tol)
            )
        if self.newton_max_iter < 1 or self.fixed_point_max_iter < 0:
            raise ValueError(VALUE_ERR_MSG.format(
                'iteration budget',
                (self.newton_max_iter, self.fixed_point_max_iter)
            ))
        if self.predictor not in PREDICTORS:
            raise ValueError(VALUE_ERR_MSG.format('predictor', self.predictor))

        threshold = h_star(p)
        overridden = h >= threshold
        if overridden and not self.override_hstar:
            raise ValueError(
                'step size h = {} is not below h* = {:.6g}'.format(
                    h, threshold
                )
            )
        if overridden:
            logutils.log(
                logging.getLogger(LOGGER_NAME),
                logging.WARNING,
                message='H_STAR OVERRIDE',
                h=h,
                h_star=threshold
            )

        g = p.gamma
        decay_v = math.exp(-0.5 * g * h)
        decay_z = np.exp(-p.alpha * h)

        # gamma lambda (e^{-gamma h/2} - e^{-alpha h}) / (2 alpha - gamma),
        # limit (gamma lambda h / 2) e^{-gamma h/2} at 2 alpha = gamma
        rate_gap = p.alpha - 0.5 * g
        degenerate = np.abs(2.0 * p.alpha - g) < 1e-6 * g
        safe_gap = np.where(degenerate, 1.0, rate_gap)
        regular = (
            -g * p.lam * decay_v * np.expm1(-safe_gap * h) / (2.0 * safe_gap)
        )
        limit = 0.5 * g * p.lam * h * decay_v
        coupling = np.where(degenerate, limit, regular)

        sigma = np.concatenate((
            [math.sqrt(-2.0 * math.expm1(-g * h))],
            np.sqrt(-np.expm1(-2.0 * p.alpha * h))
        ))

        setattr_ = object.__setattr__
        setattr_(self, 'h', h)
        setattr_(self, 'h_star', threshold)
        setattr_(self, 'hstar_overridden', overridden)
        setattr_(self, 'decay_v', decay_v)
        setattr_(self, 'decay_z', decay_z)
        setattr_(self, 'coupling', coupling)
        setattr_(self, 'sigma', sigma)

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def noise_decay(self) -> np.ndarray:
        return np.concatenate(([self.decay_v], self.decay_z))

    def with_step(self, h: float) -> 'StepperConfig':
        return StepperConfig(
            params=self.params,
            h=h,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            fixed_point_damping=self.fixed_point_damping,
            fixed_point_max_iter=self.fixed_point_max_iter,
            predictor=self.predictor,
            override_hstar=self.override_hstar,
        )


@dataclass(frozen=True)
class NoiseBlock:
    '''
    Exact stochastic-convolution increments of one step for (v, z_1..z_k);
    shape (..., k+1).
    '''

    g: np.ndarray

    @classmethod
    def zeros(
        cls,
        cfg: StepperConfig,
        n: Optional[int] = None
    ) -> 'NoiseBlock':
        shape = (cfg.k + 1,) if n is None else (n, cfg.k + 1)
        return cls(np.zeros(shape))


@dataclass(frozen=True)
class SubstepResult:
    y_bar: np.ndarray
    newton_iters: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    fallback: np.ndarray


@dataclass(frozen=True)
class StepRecord:
    y_bar: np.ndarray
    y_next: np.ndarray
    newton_iters: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    fallback: np.ndarray


def skew_matrix(params: ModelParams) -> np.ndarray:
    # Psi^D(y) = S grad H(y)
    d = params.dim
    S = np.zeros((d, d))
    S[0, 1:-1] = params.lam
    S[1:-1, 0] = -params.lam
    S[0, -1] = -1.0
    S[-1, 0] = 1.0
    return S


def hamiltonian_gradient(params: ModelParams, y: np.ndarray) -> np.ndarray:
    v, z, x = split_state(y)
    half_g = 0.5 * params.gamma
    return np.concatenate((
        (v + half_g * x)[..., None],
        z,
        (params.potential.gradient(x) + half_g * v)[..., None]
    ), axis=-1)


def deterministic_field(params: ModelParams, s: StateLike) -> np.ndarray:
    y = as_state_array(s)
    return hamiltonian_gradient(params, y) @ skew_matrix(params).T


def drift(params: ModelParams, s: StateLike) -> np.ndarray:
    '''Drift of the lifted GLE.'''
    y = as_state_array(s)
    v, z, x = split_state(y)
    dv = -params.gamma * v - params.potential.gradient(x) + z @ params.lam
    dz = -params.alpha * z - params.lam * v[..., None]
    return np.concatenate((dv[..., None], dz, v[..., None]), axis=-1)


def diffusion(params: ModelParams) -> np.ndarray:
    return np.concatenate((
        [math.sqrt(2.0 * params.gamma)],
        np.sqrt(2.0 * params.alpha),
        [0.0]
    ))


def avf_residual(
    y_bar: StateLike,
    y_n: StateLike,
    cfg: StepperConfig
) -> np.ndarray:
    yb = as_state_array(y_bar)
    yn = as_state_array(y_n)
    p = cfg.params
    h, g, lam = cfg.h, p.gamma, p.lam
    vb, zb, xb = split_state(yb)
    v, z, x = split_state(yn)

    v_sum = vb + v
    x_sum = xb + x
    A = (
        -0.25 * g * h * v_sum
        - h * discrete_gradient(p.potential, x, xb)
        + 0.5 * h * ((zb + z) @ lam)
    )
    B = (-0.5 * h * lam * v_sum[..., None]
         - 0.25 * g * h * lam * x_sum[..., None])
    C = 0.25 * g * h * x_sum + 0.5 * h * v_sum

    return np.concatenate((
        (vb - v - A)[..., None],
        zb - z - B,
        (xb - x - C)[..., None]
    ), axis=-1)


def _row_norm(r: np.ndarray) -> np.ndarray:
    return np.max(np.abs(r), axis=-1)


def _newton(
    y_bar: np.ndarray,
    y_n: np.ndarray,
    cfg: StepperConfig,
    active: np.ndarray,
    iters: np.ndarray,
    residual: np.ndarray
) -> None:
    for _ in range(cfg.newton_max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return
        G = avf_residual(y_bar[idx], y_n[idx], cfg)
        res = _row_norm(G)
        residual[idx] = res
        iters[idx] += 1
        done = res <= cfg.newton_tol
        active[idx[done]] = False
        broken = ~np.isfinite(res)
        active[idx[broken]] = False

        step = ~done & ~broken
        if not np.any(step):
            return
        rows = idx[step]
        J = dG_dYbar(y_bar[rows], y_n[rows], cfg)
        try:
            delta = np.linalg.solve(J, G[step][..., None])[..., 0]
        except np.linalg.LinAlgError:
            active[rows] = False
            return
        y_bar[rows] -= delta

    # rows still active were moved by the last update
    idx = np.flatnonzero(active)
    if idx.size:
        residual[idx] = _row_norm(avf_residual(y_bar[idx], y_n[idx], cfg))


def _fixed_point(
    y_bar: np.ndarray,
    y_n: np.ndarray,
    cfg: StepperConfig,
    rows: np.ndarray,
    residual: np.ndarray
) -> np.ndarray:
    # y <- y - omega G(y): a contraction for h < h*
    start = y_n[rows]
    y = y_bar[rows].copy()
    with np.errstate(over='ignore', invalid='ignore'):
        newton_res = _row_norm(avf_residual(y, start, cfg))
    # restart from y_n only where the Newton iterate is worse
    worse = ~(newton_res <= _row_norm(avf_residual(start, start, cfg)))
    y[worse] = start[worse]
    pending = np.ones(rows.size, dtype=bool)
    res = np.full(rows.size, np.inf)
    for _ in range(cfg.fixed_point_max_iter):
        if not np.any(pending):
            break
        G = avf_residual(y[pending], start[pending], cfg)
        r = _row_norm(G)
        res[pending] = r
        done = r <= cfg.newton_tol
        sel = np.flatnonzero(pending)
        y[sel[~done]] -= cfg.fixed_point_damping * G[~done]
        pending[sel[done]] = False
    if np.any(pending):
        res[pending] = _row_norm(
            avf_residual(y[pending], start[pending], cfg)
        )
    y_bar[rows] = y
    residual[rows] = res
    return res <= cfg.newton_tol


def avf_substep(
    y_n: StateLike,
    cfg: StepperConfig,
    strict: bool = True
) -> SubstepResult:
    '''
    Solves G(Ybar, Y_n, h) = 0. With `strict`, a state that neither Newton
    nor the fixed-point fallback resolves raises NonConvergence; otherwise
    it is reported through `converged`.
    '''
    yn = as_state_array(y_n)
    single = yn.ndim == 1
    yn2 = np.atleast_2d(yn)
    n = yn2.shape[0]

    finite = np.all(np.isfinite(yn2), axis=-1)
    if cfg.predictor == 'explicit':
        y_bar = yn2 + cfg.h * deterministic_field(cfg.params, yn2)
        y_bar[~finite] = yn2[~finite]
    else:
        y_bar = yn2.copy()

    iters = np.zeros(n, dtype=int)
    residual = np.full(n, np.inf)
    active = finite.copy()
    _newton(y_bar, yn2, cfg, active, iters, residual)

    converged = residual <= cfg.newton_tol
    fallback = finite & ~converged
    rows = np.flatnonzero(fallback)
    if rows.size:
        logutils.log(
            logging.getLogger(LOGGER_NAME),
            logging.DEBUG,
            message='NEWTON FALLBACK',
            states=int(rows.size),
            h=cfg.h
        )
        converged[rows] = _fixed_point(y_bar, yn2, cfg, rows, residual)

    if strict and not np.all(converged):
        i = int(np.flatnonzero(~converged)[0])
        raise NonConvergence(int(iters[i]), float(residual[i]))

    if single:
        return SubstepResult(y_bar[0], iters[0], residual[0], converged[0],
                             fallback[0])
    return SubstepResult(y_bar, iters, residual, converged, fallback)


def ou_substep(
    y_bar: StateLike,
    noise: NoiseBlock,
    cfg: StepperConfig
) -> np.ndarray:
    yb = as_state_array(y_bar)
    vb, zb, xb = split_state(yb)
    g = np.asarray(noise.g, dtype=float)
    v_next = cfg.decay_v * vb + g[..., 0]
    z_next = cfg.decay_z * zb + cfg.coupling * xb[..., None] + g[..., 1:]
    x_next = cfg.decay_v * xb
    return np.concatenate(
        (v_next[..., None], z_next, x_next[..., None]), axis=-1
    )


def split_step(
    y_n: StateLike,
    noise: NoiseBlock,
    cfg: StepperConfig,
    strict: bool = True
) -> StepRecord:
    sub = avf_substep(y_n, cfg, strict=strict)
    y_next = ou_substep(sub.y_bar, noise, cfg)
    return StepRecord(
        y_bar=sub.y_bar,
        y_next=y_next,
        newton_iters=sub.newton_iters,
        residual=sub.residual,
        converged=sub.converged,
        fallback=sub.fallback
    )


def step_jacobian_fd(
    y_n: StateLike,
    cfg: StepperConfig,
    eps: float = 1e-5
) -> np.ndarray:
    '''
    Central finite-difference Jacobian of Y_n -> Y_{n+1} with the noise
    frozen; the noise is additive, so zero noise gives the same matrix.
    '''
    y = as_state_array(y_n)
    d = cfg.dim
    shifts = eps * np.eye(d)
    plus = y[..., None, :] + shifts
    minus = y[..., None, :] - shifts
    batch = np.concatenate((plus, minus), axis=-2).reshape(-1, d)
    out = split_step(batch, NoiseBlock.zeros(cfg, batch.shape[0]), cfg).y_next
    out = out.reshape(y.shape[:-1] + (2, d, d))
    # column j is d Y_{n+1} / d y_j
    diff = out[..., 0, :, :] - out[..., 1, :, :]
    return np.swapaxes(diff, -1, -2) / (2 * eps)


def sample_noise(
    cfg: StepperConfig,
    rng: np.random.Generator,
    n: Optional[int] = None
) -> NoiseBlock:
    shape = (cfg.k + 1,) if n is None else (n, cfg.k + 1)
    return NoiseBlock(rng.standard_normal(shape) * cfg.sigma)


def coarsen_noise(
    fine_a: NoiseBlock,
    fine_b: NoiseBlock,
    cfg_fine: StepperConfig,
    cfg_coarse: StepperConfig
) -> NoiseBlock:
    '''
    Convolution increments over [t, t + 2h] from those over [t, t + h]
    (fine_a) and [t + h, t + 2h] (fine_b).
    '''
    if cfg_fine.params is not cfg_coarse.params:
        raise ValueError('coarsening requires one model for both levels')
    if abs(cfg_coarse.h - 2.0 * cfg_fine.h) > 1e-12 * cfg_coarse.h:
        raise ValueError(
            'coarse step {} is not twice the fine step {}'.format(
                cfg_coarse.h, cfg_fine.h
            )
        )
    return NoiseBlock(cfg_fine.noise_decay * fine_a.g + fine_b.g)


def is_diverged(y: np.ndarray) -> np.ndarray:
    return ~np.all(np.isfinite(y) & (np.abs(y) <= DIVERGENCE_THRESHOLD),
                   axis=-1)


def em_step(
    y_n: StateLike,
    dW: np.ndarray,
    cfg: StepperConfig
) -> Tuple[np.ndarray, np.ndarray]:
    '''
    Explicit Euler-Maruyama step of the lifted GLE; dW has variance h.
    Returns the next state and a diverged marker.
    '''
    y = as_state_array(y_n)
    with np.errstate(over='ignore', invalid='ignore'):
        y_next = y + cfg.h * drift(cfg.params, y)
        y_next[..., :-1] += diffusion(cfg.params)[:-1] * np.asarray(dW)
    return y_next, is_diverged(y_next)
