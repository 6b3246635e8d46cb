# Copyright (c) 2026. All rights reserved.

'''
Closed-form Jacobians of the implicit AVF system G(Ybar, Y_n, h) = 0, the
transfer matrix A_n = -M (dG/dYbar)^{-1} dG/dY_n of one full step, first
order Malliavin derivatives and the covariance recursion

    gamma_{n+1} = A_n gamma_n A_n^T + gamma_1.

All builders broadcast over leading batch axes.
'''

from dataclasses import dataclass
from typing import TYPE_CHECKING, Tuple

import numpy as np

from avfgle.model import StateLike, as_state_array, f1_f2, split_state

if TYPE_CHECKING:
    from avfgle.integrator import StepperConfig

SYMMETRY_TOLERANCE = 1e-12


class SingularJacobian(ArithmeticError):
    pass


@dataclass(frozen=True)
class StepJacobians:
    dG_dYbar: np.ndarray
    dG_dYn: np.ndarray
    det_dG_dYbar: np.ndarray
    M: np.ndarray
    A_n: np.ndarray


@dataclass(frozen=True)
class MalliavinEnsembleState:
    gamma_n: np.ndarray
    n: int

    @classmethod
    def initial(
        cls,
        cfg: 'StepperConfig',
        n_paths: int = 0
    ) -> 'MalliavinEnsembleState':
        shape = (cfg.dim, cfg.dim) if n_paths == 0 else \
            (n_paths, cfg.dim, cfg.dim)
        return cls(np.zeros(shape), 0)


def _segment_weights(
    y_bar: StateLike,
    y_n: StateLike,
    cfg: 'StepperConfig'
) -> Tuple[np.ndarray, np.ndarray]:
    _, _, xb = split_state(as_state_array(y_bar))
    _, _, x = split_state(as_state_array(y_n))
    F1, F2 = f1_f2(cfg.params.potential, x, xb)
    return np.asarray(F1), np.asarray(F2)


def _dG_dYbar_from(F1: np.ndarray, cfg: 'StepperConfig') -> np.ndarray:
    p, h = cfg.params, cfg.h
    g, lam, k = p.gamma, p.lam, p.k
    z = np.arange(1, k + 1)
    J = np.zeros(F1.shape + (k + 2, k + 2))
    J[..., 0, 0] = 1.0 + 0.25 * g * h
    J[..., 0, 1:-1] = -0.5 * h * lam
    J[..., 0, -1] = h * F1
    J[..., z, 0] = 0.5 * h * lam
    J[..., z, z] = 1.0
    J[..., z, -1] = 0.25 * g * h * lam
    J[..., -1, 0] = -0.5 * h
    J[..., -1, -1] = 1.0 - 0.25 * g * h
    return J


def _dG_dYn_from(F2: np.ndarray, cfg: 'StepperConfig') -> np.ndarray:
    p, h = cfg.params, cfg.h
    g, lam, k = p.gamma, p.lam, p.k
    z = np.arange(1, k + 1)
    J = np.zeros(F2.shape + (k + 2, k + 2))
    J[..., 0, 0] = -(1.0 - 0.25 * g * h)
    J[..., 0, 1:-1] = -0.5 * h * lam
    J[..., 0, -1] = h * F2
    J[..., z, 0] = 0.5 * h * lam
    J[..., z, z] = -1.0
    J[..., z, -1] = 0.25 * g * h * lam
    J[..., -1, 0] = -0.5 * h
    J[..., -1, -1] = -(1.0 + 0.25 * g * h)
    return J


def dG_dYbar(
    y_bar: StateLike,
    y_n: StateLike,
    cfg: 'StepperConfig'
) -> np.ndarray:
    F1, _ = _segment_weights(y_bar, y_n, cfg)
    return _dG_dYbar_from(F1, cfg)


def dG_dYn(
    y_bar: StateLike,
    y_n: StateLike,
    cfg: 'StepperConfig'
) -> np.ndarray:
    _, F2 = _segment_weights(y_bar, y_n, cfg)
    return _dG_dYn_from(F2, cfg)


def closed_form_det(F1, cfg: 'StepperConfig'):
    p, h = cfg.params, cfg.h
    return 1.0 + h * h * (
        0.25 * float(np.sum(p.lam ** 2)) + 0.5 * np.asarray(F1)
        - p.gamma ** 2 / 16.0
    )


def adjugate_dG_dYbar(F1, cfg: 'StepperConfig') -> np.ndarray:
    F1 = np.asarray(F1, dtype=float)
    p, h = cfg.params, cfg.h
    g, lam, k = p.gamma, p.lam, p.k
    a = 1.0 + 0.25 * g * h
    d = 1.0 - 0.25 * g * h
    b = 0.5 * h * lam
    e = 0.25 * g * h * lam
    f = 0.5 * h
    c = h * F1
    beta = float(b @ b)
    eta = float(b @ e)
    det = closed_form_det(F1, cfg)

    z = np.arange(1, k + 1)
    adj = np.zeros(F1.shape + (k + 2, k + 2))
    adj[..., 0, 0] = d
    adj[..., 0, 1:-1] = d * b
    adj[..., 0, -1] = -(c + eta)
    adj[..., z, 0] = -(b * d + e * f)
    adj[..., 1:-1, 1:-1] = -np.outer(b, b)
    adj[..., z, z] += det[..., None]
    adj[..., 1:-1, -1] = b * (c[..., None] + eta) - e * (a + beta)
    adj[..., -1, 0] = f
    adj[..., -1, 1:-1] = f * b
    adj[..., -1, -1] = a + beta
    return adj


def ou_transfer_matrix(cfg: 'StepperConfig') -> np.ndarray:
    k = cfg.k
    z = np.arange(1, k + 1)
    M = np.zeros((k + 2, k + 2))
    M[0, 0] = cfg.decay_v
    M[z, z] = cfg.decay_z
    M[z, -1] = cfg.coupling
    M[-1, -1] = cfg.decay_v
    return M


def jacobians(
    y_bar: StateLike,
    y_n: StateLike,
    cfg: 'StepperConfig'
) -> StepJacobians:
    F1, F2 = _segment_weights(y_bar, y_n, cfg)
    N = _dG_dYbar_from(F1, cfg)
    Gn = _dG_dYn_from(F2, cfg)
    det = closed_form_det(F1, cfg)
    if np.any(np.abs(det) < 1e-14) or not np.all(np.isfinite(det)):
        raise SingularJacobian('dG/dYbar is singular (det = {})'.format(det))
    try:
        solved = np.linalg.solve(N, Gn)
    except np.linalg.LinAlgError as e:
        raise SingularJacobian(str(e))
    M = ou_transfer_matrix(cfg)
    return StepJacobians(
        dG_dYbar=N,
        dG_dYn=Gn,
        det_dG_dYbar=det,
        M=M,
        A_n=-(M @ solved)
    )


def propagate_derivative(D: np.ndarray, jac: StepJacobians) -> np.ndarray:
    '''D_r Y_{n+1} = A_n D_r Y_n for r <= t_n.'''
    return jac.A_n @ D


def fresh_derivative(cfg: 'StepperConfig') -> np.ndarray:
    # D_r Y_{n+1} for r = t_n; x receives no noise
    p = cfg.params
    D = np.zeros((cfg.dim, cfg.k + 1))
    D[0, 0] = cfg.decay_v * np.sqrt(2.0 * p.gamma)
    z = np.arange(1, cfg.k + 1)
    D[z, z] = cfg.decay_z * np.sqrt(2.0 * p.alpha)
    return D


def noise_covariance(cfg: 'StepperConfig') -> np.ndarray:
    '''gamma_1 = diag(2 - 2e^{-gamma h}, 1 - e^{-2 alpha_l h}, 0).'''
    return np.diag(np.concatenate((cfg.sigma ** 2, [0.0])))


def covariance_step(
    st: MalliavinEnsembleState,
    jac: StepJacobians,
    cfg: 'StepperConfig'
) -> MalliavinEnsembleState:
    A = jac.A_n
    X = A @ st.gamma_n @ np.swapaxes(A, -1, -2) + noise_covariance(cfg)
    return MalliavinEnsembleState(0.5 * (X + np.swapaxes(X, -1, -2)), st.n + 1)


def min_eigenvalue(m: np.ndarray):
    m = np.asarray(m, dtype=float)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0) \
            > SYMMETRY_TOLERANCE * scale:
        raise ValueError('min_eigenvalue requires a symmetric matrix')
    lowest = np.linalg.eigvalsh(m)[..., 0]
    return float(lowest) if lowest.ndim == 0 else lowest
