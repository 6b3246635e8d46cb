# Copyright (c) 2026. All rights reserved.

from functools import partial
from typing import Callable, Dict

import numpy as np

from avfgle.model import ModelParams, VALUE_ERR_MSG, hamiltonian_h

Observable = Callable[[np.ndarray], np.ndarray]


def _norm2(y: np.ndarray) -> np.ndarray:
    return np.sum(y * y, axis=-1)


def cos_norm2(y: np.ndarray) -> np.ndarray:
    return np.cos(_norm2(y))


def exp_half_norm2(y: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * _norm2(y))


def sin_norm2(y: np.ndarray) -> np.ndarray:
    return np.sin(_norm2(y))


def sin_radius_vx(y: np.ndarray) -> np.ndarray:
    return np.sin(np.hypot(y[..., 0], y[..., -1]))


def one(y: np.ndarray) -> np.ndarray:
    return np.ones(y.shape[:-1])


def momentum(y: np.ndarray) -> np.ndarray:
    return y[..., 0]


def position(y: np.ndarray) -> np.ndarray:
    return y[..., -1]


def shifted_hamiltonian(y: np.ndarray, params: ModelParams) -> np.ndarray:
    # H + C_H with C_H = 1 - inf H, positive everywhere
    return hamiltonian_h(params, y) + 1.0 - params.hamiltonian_infimum


OBSERVABLES: Dict[str, Observable] = {
    'cos_norm2': cos_norm2,
    'exp_half_norm2': exp_half_norm2,
    'sin_norm2': sin_norm2,
    'sin_radius_vx': sin_radius_vx,
    'one': one,
    'v': momentum,
    'x': position,
}

PARAMETRIC_OBSERVABLES = {
    'hamiltonian': shifted_hamiltonian,
}

OBSERVABLE_NAMES = sorted([*OBSERVABLES, *PARAMETRIC_OBSERVABLES])


def resolve_observable(name: str, params: ModelParams) -> Observable:
    if name in OBSERVABLES:
        return OBSERVABLES[name]
    if name in PARAMETRIC_OBSERVABLES:
        return partial(PARAMETRIC_OBSERVABLES[name], params=params)
    raise ValueError(VALUE_ERR_MSG.format('observable', name))
