# Copyright (c) 2020-2026. All rights reserved.

from dataclasses import dataclass, fields, replace
from enum import Enum, unique
import math
from typing import (
    Any,
    Dict,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Type,
)

import jsonschema  # type: ignore
import yaml

from avfgle import RUNCONFIG_SCHEMA
from avfgle.integrator import PREDICTORS
from avfgle.model import ModelParams, PotentialSpec, VALUE_ERR_MSG, h_star
from avfgle.montecarlo.ensemble import SCHEMES
from avfgle.observables import OBSERVABLE_NAMES

# Initial values of the temporal-average study (k = 3)
REFERENCE_INITIAL_STATES: Mapping[str, Tuple[float, ...]] = {
    'Y1': (-10.0, 2.0, 3.0, 4.0, 1.0),
    'Y2': (2.0, 1.0, 1.0, 1.0, -10.0),
    'Y3': (1.0, -1.0, -1.0, -1.0, 3.0),
    'Y4': (4.0, 2.0, 3.0, 4.0, 2.0),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        super().__init__(
            message if line is None else 'line {}: {}'.format(line, message)
        )
        self.message = message
        self.line = line


class SettingError(ValueError):
    '''A semantic error located at a key path of the configuration.'''

    def __init__(self, path: Tuple[str, ...], message: str) -> None:
        super().__init__(message)
        self.path = path


@unique
class ExperimentKind(Enum):
    converge = 'converge'
    ergodic = 'ergodic'
    distribution = 'distribution'
    malliavin = 'malliavin'
    simulate = 'simulate'


def _require(ok: bool, key: str, value: Any) -> None:
    if not ok:
        raise SettingError(('run', key), VALUE_ERR_MSG.format(key, value))


def _multiple_of(T: float, h: float) -> bool:
    n = T / h
    return round(n) >= 1 and abs(n - round(n)) <= 1e-9 * max(1.0, n)


def _state(params: ModelParams, value: Optional[Sequence[float]],
           key: str) -> Tuple[float, ...]:
    if value is None:
        return tuple([1.0] * params.dim)
    state = tuple(float(c) for c in value)
    _require(
        len(state) == params.dim and all(math.isfinite(c) for c in state),
        key, list(value)
    )
    return state


def _check_levels(levels: Sequence[float], T: float) -> None:
    _require(len(levels) > 0 and all(h > 0 for h in levels),
             'levels', list(levels))
    for coarse, fine in zip(levels, levels[1:]):
        _require(abs(coarse - 2.0 * fine) <= 1e-12 * coarse,
                 'levels', list(levels))
    for h in levels:
        _require(_multiple_of(T, h), 'levels', list(levels))


def _tuple(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuple(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuple(v) for k, v in value.items()}
    return value


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunSettings:
    '''Settings shared by every experiment.'''

    seed: int = 0
    zero_noise: bool = False
    override_hstar: bool = False
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    predictor: str = 'none'
    block_size: int = 250

    @classmethod
    def from_api_dm(cls, vars: Mapping[str, Any]) -> 'RunSettings':
        known = {f.name for f in fields(cls)}
        for key in vars:
            if key not in known:
                raise SettingError(
                    ('run', key),
                    'unknown key "{}" for this experiment'.format(key)
                )
        return cls(**{k: _tuple(v) for k, v in vars.items()})

    def to_api_dm(self) -> Dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def step_sizes(self) -> Sequence[float]:
        return ()

    def resolve(self, params: ModelParams) -> 'RunSettings':
        '''
        Validates against the model and materializes model-dependent
        defaults.
        '''
        _require(self.seed >= 0, 'seed', self.seed)
        _require(self.newton_tol > 0, 'newton_tol', self.newton_tol)
        _require(self.newton_max_iter >= 1, 'newton_max_iter',
                 self.newton_max_iter)
        _require(self.predictor in PREDICTORS, 'predictor', self.predictor)
        _require(self.block_size >= 1, 'block_size', self.block_size)
        if not self.override_hstar:
            threshold = h_star(params)
            for h in self.step_sizes():
                if h >= threshold:
                    raise SettingError(
                        ('run',),
                        'step size {} is not below h* = {:.6g}'.format(
                            h, threshold
                        )
                    )
        return self


@dataclass(frozen=True)
class ConvergeSettings(RunSettings):
    T: float = 1.0
    levels: Tuple[float, ...] = tuple(2.0 ** -i for i in range(6, 11))
    n_paths: int = 2000
    initial_state: Optional[Tuple[float, ...]] = None
    observable: str = 'sin_radius_vx'
    bootstrap_resamples: int = 200
    min_paths: int = 100
    strong_order_band: Tuple[float, float] = (0.85, 1.15)
    weak_order_band: Tuple[float, float] = (0.7, 1.4)
    weak_slope_min: float = 0.8
    density_probe: bool = True
    density_bins: int = 128
    density_range: Tuple[float, float] = (-3.0, 3.0)

    def step_sizes(self) -> Sequence[float]:
        return self.levels

    def resolve(self, params: ModelParams) -> 'ConvergeSettings':
        if len(self.levels) < 3:
            raise SettingError(('run', 'levels'), 'need >= 3 levels')
        _require(self.T > 0, 'T', self.T)
        _check_levels(self.levels, self.T)
        _require(self.n_paths >= 1, 'n_paths', self.n_paths)
        _require(self.min_paths >= 2, 'min_paths', self.min_paths)
        _require(self.bootstrap_resamples >= 2, 'bootstrap_resamples',
                 self.bootstrap_resamples)
        _require(self.observable in OBSERVABLE_NAMES, 'observable',
                 self.observable)
        _require(self.density_range[0] < self.density_range[1],
                 'density_range', list(self.density_range))
        super().resolve(params)
        return replace(self, initial_state=_state(
            params, self.initial_state, 'initial_state'
        ))


@dataclass(frozen=True)
class ErgodicSettings(RunSettings):
    h: float = 0.125
    T: float = 512.0
    n_paths: int = 2000
    initial_states: Optional[Dict[str, Tuple[float, ...]]] = None
    observables: Tuple[str, ...] = ('cos_norm2', 'exp_half_norm2', 'sin_norm2')
    record_every: int = 8
    oracle_samples: int = 10 ** 6
    tolerance_factor: float = 3.0
    moment_check: bool = True
    stationarity_tolerance: float = 0.05
    drift_check: bool = True
    drift_starts: int = 64
    drift_inner: int = 200
    drift_radius: float = 3.0

    def step_sizes(self) -> Sequence[float]:
        return (self.h,)

    def resolve(self, params: ModelParams) -> 'ErgodicSettings':
        _require(self.h > 0 and self.T > 0 and _multiple_of(self.T, self.h),
                 'T', self.T)
        _require(self.n_paths >= 2, 'n_paths', self.n_paths)
        _require(self.record_every >= 1, 'record_every', self.record_every)
        _require(self.oracle_samples >= 10 ** 4, 'oracle_samples',
                 self.oracle_samples)
        _require(self.drift_starts >= 2, 'drift_starts', self.drift_starts)
        _require(self.drift_inner >= 1, 'drift_inner', self.drift_inner)
        _require(self.drift_radius > 0, 'drift_radius', self.drift_radius)
        _require(len(self.observables) > 0 and all(
            g in OBSERVABLE_NAMES for g in self.observables
        ), 'observables', list(self.observables))
        super().resolve(params)
        states = self.initial_states
        if states is None:
            if params.dim != 5:
                raise SettingError(
                    ('run', 'initial_states'),
                    'default initial states need k = 3; set initial_states'
                )
            states = dict(REFERENCE_INITIAL_STATES)
        _require(len(states) > 0, 'initial_states', states)
        return replace(self, initial_states={
            label: _state(params, s, 'initial_states')
            for label, s in states.items()
        })


@dataclass(frozen=True)
class DistributionSettings(RunSettings):
    h: float = 0.125
    times: Tuple[float, ...] = (2.0, 16.0, 128.0, 512.0)
    n_paths: int = 2000
    initial_state: Optional[Tuple[float, ...]] = None
    bins: int = 32
    kde_bins: int = 128
    range: Tuple[float, float] = (-3.0, 3.0)
    baseline_replicates: int = 5
    tolerance_factor: float = 3.0

    def step_sizes(self) -> Sequence[float]:
        return (self.h,)

    @property
    def T(self) -> float:
        return max(self.times)

    def resolve(self, params: ModelParams) -> 'DistributionSettings':
        if len(self.times) == 0:
            raise SettingError(('run', 'times'), 'time list is empty')
        _require(self.h > 0 and all(
            t > 0 and _multiple_of(t, self.h) for t in self.times
        ), 'times', list(self.times))
        _require(self.n_paths >= 1, 'n_paths', self.n_paths)
        _require(self.bins >= 1 and self.kde_bins >= 1, 'bins', self.bins)
        _require(self.range[0] < self.range[1], 'range', list(self.range))
        _require(self.baseline_replicates >= 1, 'baseline_replicates',
                 self.baseline_replicates)
        super().resolve(params)
        return replace(
            self,
            times=tuple(sorted(self.times)),
            initial_state=_state(params, self.initial_state, 'initial_state')
        )


@dataclass(frozen=True)
class MalliavinSettings(RunSettings):
    T: float = 1.0
    levels: Tuple[float, ...] = tuple(2.0 ** -i for i in range(4, 9))
    n_paths: int = 100
    initial_state: Optional[Tuple[float, ...]] = None
    fd_states: int = 100
    fd_tolerance: float = 1e-6
    det_draws: int = 10 ** 4
    det_tolerance: float = 1e-12
    slope_min: float = -3.5

    def step_sizes(self) -> Sequence[float]:
        return self.levels

    def resolve(self, params: ModelParams) -> 'MalliavinSettings':
        _require(self.T > 0, 'T', self.T)
        _require(len(self.levels) > 0 and all(
            h > 0 and _multiple_of(self.T, h) for h in self.levels
        ), 'levels', list(self.levels))
        _require(self.n_paths >= 1, 'n_paths', self.n_paths)
        _require(self.fd_states >= 1, 'fd_states', self.fd_states)
        _require(self.det_draws >= 1, 'det_draws', self.det_draws)
        super().resolve(params)
        return replace(self, initial_state=_state(
            params, self.initial_state, 'initial_state'
        ))


@dataclass(frozen=True)
class SimulateSettings(RunSettings):
    h: float = 0.125
    n_steps: int = 10
    n_paths: int = 1
    stride: int = 1
    scheme: str = 'avf'
    initial_state: Optional[Tuple[float, ...]] = None

    def step_sizes(self) -> Sequence[float]:
        # the explicit baseline has no solvability threshold
        return (self.h,) if self.scheme == 'avf' else ()

    def resolve(self, params: ModelParams) -> 'SimulateSettings':
        _require(self.h > 0, 'h', self.h)
        _require(self.n_steps >= 1, 'n_steps', self.n_steps)
        _require(self.n_paths >= 1, 'n_paths', self.n_paths)
        _require(self.stride >= 1, 'stride', self.stride)
        _require(self.scheme in SCHEMES, 'scheme', self.scheme)
        super().resolve(params)
        return replace(self, initial_state=_state(
            params, self.initial_state, 'initial_state'
        ))


SETTINGS: Mapping[ExperimentKind, Type[RunSettings]] = {
    ExperimentKind.converge: ConvergeSettings,
    ExperimentKind.ergodic: ErgodicSettings,
    ExperimentKind.distribution: DistributionSettings,
    ExperimentKind.malliavin: MalliavinSettings,
    ExperimentKind.simulate: SimulateSettings,
}


def model_from_api_dm(vars: Mapping[str, Any]) -> ModelParams:
    pot = vars['potential']
    if 'preset' in pot:
        potential = PotentialSpec.preset(pot['preset'])
    else:
        potential = PotentialSpec.from_coefficients(
            pot['coefficients'],
            pot.get('hessian_lower_bound'),
            allow_degenerate=pot.get('allow_degenerate', False)
        )
    return ModelParams.create(
        gamma=vars['gamma'],
        k=vars['k'],
        alpha=vars['alpha'],
        lam=vars['lambda'],
        potential=potential
    )


def model_to_api_dm(params: ModelParams) -> Dict[str, Any]:
    pot = params.potential
    potential: Dict[str, Any] = {
        'coefficients': [float(c) for c in pot.coefficients],
        'allow_degenerate': pot.allow_degenerate,
    }
    if pot.hessian_lower_bound is not None:
        potential['hessian_lower_bound'] = float(pot.hessian_lower_bound)
    return {
        'gamma': float(params.gamma),
        'k': params.k,
        'alpha': [float(a) for a in params.alpha],
        'lambda': [float(v) for v in params.lam],
        'potential': potential,
    }


@dataclass(frozen=True, eq=False)
class RunConfig:
    service_name: str
    experiment: ExperimentKind
    model: ModelParams
    run: RunSettings
    result_store: Mapping[str, Any]
    logging: Mapping[str, Any]

    @classmethod
    def from_api_dm(cls, vars: Mapping[str, Any]) -> 'RunConfig':
        experiment = ExperimentKind(vars['experiment'])
        try:
            params = model_from_api_dm(vars['model'])
        except ValueError as e:
            raise SettingError(('model',), str(e))
        try:
            settings = SETTINGS[experiment].from_api_dm(vars.get('run', {}))
        except TypeError as e:
            raise SettingError(('run',), str(e))
        return cls(
            service_name=vars['service']['name'],
            experiment=experiment,
            model=params,
            run=settings.resolve(params),
            result_store=vars.get('result-store', {'memory': None}),
            logging=vars.get('logging', {'version': 1})
        )

    def to_api_dm(self) -> Dict[str, Any]:
        return {
            'service': {'name': self.service_name},
            'experiment': self.experiment.value,
            'model': model_to_api_dm(self.model),
            'run': self.run.to_api_dm(),
            'result-store': dict(self.result_store),
            'logging': dict(self.logging),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_api_dm(), sort_keys=False)


def _node_line(
    root: Optional[yaml.Node],
    path: Sequence[Any]
) -> Optional[int]:
    '''1-based line of the deepest node found along `path`.'''
    if root is None:
        return None
    node = root
    line = node.start_mark.line + 1
    for key in path:
        nxt = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    line = k.start_mark.line + 1
                    nxt = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                and 0 <= key < len(node.value):
            nxt = node.value[key]
            line = nxt.start_mark.line + 1
        if nxt is None:
            break
        node = nxt
    return line


def apply_overrides(
    vars: Dict[str, Any],
    overrides: Mapping[str, Any]
) -> None:
    run = vars.setdefault('run', {})
    for key in ('seed', 'zero_noise', 'override_hstar'):
        if overrides.get(key) is not None:
            run[key] = overrides[key]
    if overrides.get('out') is not None:
        vars['result-store'] = {'fs': overrides['out']}


def load_run_config(
    text: str,
    overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        vars = yaml.load(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigError(
            'YAML parse error: {}'.format(getattr(e, 'problem', e)),
            None if mark is None else mark.line + 1
        )
    if not isinstance(vars, dict):
        raise ConfigError('configuration must be a mapping', 1)

    if overrides:
        apply_overrides(vars, overrides)

    validator = jsonschema.Draft7Validator(RUNCONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(vars))
    if error is not None:
        path = list(error.absolute_path)
        if error.validator == 'additionalProperties' \
                and isinstance(error.instance, dict):
            # point at the first unexpected key, not its parent
            allowed = error.schema.get('properties', {})
            extra = [k for k in error.instance if k not in allowed]
            path += extra[:1]
        raise ConfigError(
            'schema validation failed at {}: {}'.format(
                '/'.join(str(p) for p in path) or '<root>', error.message
            ),
            _node_line(root, path)
        )

    try:
        return RunConfig.from_api_dm(vars)
    except SettingError as e:
        raise ConfigError(str(e), _node_line(root, e.path))
    except ValueError as e:
        raise ConfigError(str(e))
