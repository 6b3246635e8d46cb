# Copyright (c) 2026. All rights reserved.

'''
One coroutine per experiment. Each runs its ensemble through the service,
writes CSV tables to the result store and returns a `CommandOutcome` whose
checks decide the exit status of `--check` runs.
'''

from dataclasses import dataclass, field
import itertools
import logging
import math
from typing import Any, Awaitable, Callable, Dict, List, Mapping, Tuple

import numpy as np

from avfgle.datamodel import (
    ConvergeSettings, DistributionSettings, ErgodicSettings, ExperimentKind,
    MalliavinSettings, RunConfig, SimulateSettings
)
from avfgle.integrator import (
    NoiseBlock, StepperConfig, split_step, step_jacobian_fd
)
from avfgle.malliavin import closed_form_det, jacobians
from avfgle.model import (
    GibbsReference, f1_f2, gibbs_expectation, gibbs_sample, h_star
)
from avfgle.montecarlo.density import (
    density_refinement_probe, histogram2d, kde2d, ks_standard_normal,
    same_law_tv_baseline, total_variation
)
from avfgle.montecarlo.ensemble import (
    ChainConfig, ChainResult, EnsembleConfig, PathResult, run_chain,
    run_coupled_paths
)
from avfgle.montecarlo.estimators import (
    build_error_table, lyapunov_drift, order_regression, path_average_summary,
    stationarity_variation, temporal_average
)
from avfgle.montecarlo.rng import (
    AUXILIARY_DOMAIN, BOOTSTRAP_DOMAIN, ORACLE_DOMAIN, derived_rng
)
from avfgle.observables import resolve_observable
from avfgle.service import ExperimentService, NumericalFailure

import avfgle.utils.logutils as logutils

CHECK_HEADER = ('check', 'value', 'lower', 'upper', 'passed')


@dataclass
class CommandOutcome:
    tables: List[str] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


class _Checks:
    def __init__(self) -> None:
        self.rows: List[Tuple] = []

    def add(self, name: str, value: float, lower: float = -math.inf,
            upper: float = math.inf) -> bool:
        ok = bool(lower <= value <= upper)
        self.rows.append((name, float(value), float(lower), float(upper), ok))
        return ok

    def as_dict(self) -> Dict[str, bool]:
        return {row[0]: row[4] for row in self.rows}


def _log(service: ExperimentService, message: str, lvl: int = logging.INFO,
         **kwargs) -> None:
    logutils.log(service.logger, lvl, include_context=True, message=message,
                 **kwargs)


def _t_label(t: float) -> str:
    return '{:g}'.format(t)


async def _write_checks(
    service: ExperimentService,
    outcome: CommandOutcome,
    checks: _Checks
) -> None:
    await service.write_table('checks', CHECK_HEADER, checks.rows)
    outcome.tables.append('checks')
    outcome.checks.update(checks.as_dict())
    for name, value, lower, upper, ok in checks.rows:
        _log(service, 'CHECK', logging.INFO if ok else logging.WARNING,
             check=name, value=value, lower=lower, upper=upper, passed=ok)


def _chain_config(cfg: RunConfig, **kwargs) -> ChainConfig:
    s = cfg.run
    return ChainConfig(
        params=cfg.model,
        master_seed=s.seed,
        zero_noise=s.zero_noise,
        override_hstar=s.override_hstar,
        newton_tol=s.newton_tol,
        newton_max_iter=s.newton_max_iter,
        predictor=s.predictor,
        block_size=s.block_size,
        **kwargs
    )


def _require_survivors(label: str, n_alive: int) -> None:
    if n_alive == 0:
        raise NumericalFailure('every path diverged at {}'.format(label))


async def cmd_converge(service: ExperimentService) -> CommandOutcome:
    cfg = service.config
    s = cfg.run
    assert isinstance(s, ConvergeSettings)
    outcome = CommandOutcome()

    ensemble = EnsembleConfig(
        params=cfg.model,
        n_paths=s.n_paths,
        T=s.T,
        levels=s.levels,
        master_seed=s.seed,
        initial_state=np.asarray(s.initial_state),
        zero_noise=s.zero_noise,
        override_hstar=s.override_hstar,
        newton_tol=s.newton_tol,
        newton_max_iter=s.newton_max_iter,
        predictor=s.predictor,
        block_size=s.block_size
    )
    with logutils.timed(service.logger, 'COUPLED PATHS', levels=len(s.levels),
                        n_paths=s.n_paths):
        results: List[PathResult] = await service.run_blocking(
            run_coupled_paths, ensemble, service.executor
        )

    for h in ensemble.levels:
        n_diverged = sum(r.diverged[h] for r in results)
        _log(
            service, 'LEVEL SUMMARY',
            logging.INFO if n_diverged == 0 else logging.WARNING,
            h=h,
            diverged=n_diverged,
            mean_newton_iters=float(np.mean(
                [r.mean_newton_iters[h] for r in results]
            )),
            max_newton_iters=max(r.max_newton_iters[h] for r in results),
            fallback_steps=sum(r.fallback_steps[h] for r in results)
        )
        _require_survivors('h = {}'.format(h), s.n_paths - n_diverged)

    table = build_error_table(
        results,
        ensemble.levels,
        resolve_observable(s.observable, cfg.model),
        rng=derived_rng(s.seed, BOOTSTRAP_DOMAIN),
        min_paths=min(s.min_paths, s.n_paths),
        n_resamples=s.bootstrap_resamples
    )
    await service.write_table('error_table', table.header, table.to_rows())
    outcome.tables.append('error_table')

    strong_slope = table.strong_slope()
    checks = _Checks()
    if s.zero_noise:
        # deterministic scheme difference; the slope is recorded only
        checks.add('deterministic_order', strong_slope)
    else:
        weak_mean = table.mean_weak_order()
        checks.add('strong_order_regression', strong_slope,
                   *s.strong_order_band)
        checks.add('weak_order_mean', weak_mean, *s.weak_order_band)
        checks.add('weak_order_regression', table.weak_slope(),
                   s.weak_slope_min)
    outcome.summary['strong_slope'] = strong_slope

    if s.density_probe:
        rows = []
        rng2d = (s.density_range, s.density_range)
        for coarse, fine in zip(ensemble.levels, ensemble.levels[1:]):
            both = [r for r in results
                    if not r.diverged[coarse] and not r.diverged[fine]]
            probe = density_refinement_probe(
                np.array([r.terminal[coarse] for r in both]),
                np.array([r.terminal[fine] for r in both]),
                s.density_bins, rng2d
            )
            rows.append((coarse, probe))
        await service.write_table('density_probe', ('h', 'sup_kde_difference'),
                                  rows)
        outcome.tables.append('density_probe')

    await _write_checks(service, outcome, checks)
    return outcome


async def cmd_ergodic(service: ExperimentService) -> CommandOutcome:
    cfg = service.config
    s = cfg.run
    assert isinstance(s, ErgodicSettings)
    outcome = CommandOutcome()
    checks = _Checks()

    ref = GibbsReference.build(cfg.model.potential)
    reference: Dict[str, Tuple[float, float]] = {}
    for i, name in enumerate(s.observables):
        reference[name] = gibbs_expectation(
            ref, cfg.model, resolve_observable(name, cfg.model),
            s.oracle_samples, derived_rng(s.seed, ORACLE_DOMAIN, i)
        )
    await service.write_table(
        'ergodic_reference', ('g_name', 'reference', 'std_error'),
        [(name, m, se) for name, (m, se) in reference.items()]
    )
    outcome.tables.append('ergodic_reference')

    observables = tuple(s.observables)
    if s.moment_check and 'hamiltonian' not in observables:
        observables = observables + ('hamiltonian',)
    n_steps = int(round(s.T / s.h))

    series_rows: List[Tuple] = []
    moment_rows: List[Tuple] = []
    finals: Dict[Tuple[str, str], Tuple[float, float]] = {}
    assert s.initial_states is not None
    for index, (label, y0) in enumerate(s.initial_states.items()):
        chain = _chain_config(
            cfg,
            h=s.h,
            n_steps=n_steps,
            n_paths=s.n_paths,
            initial_state=np.asarray(y0),
            observables=observables,
            record_every=s.record_every,
            path_offset=index * s.n_paths
        )
        with logutils.timed(service.logger, 'CHAIN', initial_label=label,
                            n_steps=n_steps, n_paths=s.n_paths):
            res: ChainResult = await service.run_blocking(
                run_chain, chain, service.executor
            )
        _log(service, 'DIVERGED PATHS', initial_label=label,
             diverged=res.n_diverged)
        _require_survivors(label, s.n_paths - res.n_diverged)

        times = chain.record_steps * s.h
        for name in s.observables:
            mean, se = path_average_summary(res.time_averages[name])
            series_rows.extend(
                (float(t), name, label, float(m), float(e))
                for t, m, e in zip(times, mean, se)
            )
            finals[(name, label)] = (float(mean[-1]), float(se[-1]))

        if s.moment_check:
            instant = res.instant_values['hamiltonian']
            h_means = np.nanmean(instant, axis=1)
            running = temporal_average(instant)
            moment_rows.extend(
                (float(t), label, float(m), float(r))
                for t, m, r in zip(times, h_means, running)
            )
            checks.add('moment_bounded_{}'.format(label),
                       float(np.max(h_means)))
            settled = int(np.searchsorted(chain.record_steps, 10.0 / s.h))
            if settled < h_means.size:
                checks.add(
                    'stationarity_{}'.format(label),
                    stationarity_variation(h_means, settled),
                    upper=s.stationarity_tolerance
                )

    await service.write_table(
        'temporal_averages',
        ('t', 'g_name', 'initial_label', 'running_mean', 'std_error'),
        series_rows
    )
    outcome.tables.append('temporal_averages')
    if moment_rows:
        await service.write_table(
            'moment_bound',
            ('t', 'initial_label', 'mean_hamiltonian', 'running_mean'),
            moment_rows
        )
        outcome.tables.append('moment_bound')

    if s.drift_check:
        stepper = StepperConfig(
            params=cfg.model,
            h=s.h,
            newton_tol=s.newton_tol,
            newton_max_iter=s.newton_max_iter,
            predictor=s.predictor,
            override_hstar=s.override_hstar
        )
        starts = derived_rng(s.seed, AUXILIARY_DOMAIN, 2).uniform(
            -s.drift_radius, s.drift_radius, (s.drift_starts, cfg.model.dim)
        )
        with logutils.timed(service.logger, 'LYAPUNOV DRIFT',
                            n_starts=s.drift_starts, n_inner=s.drift_inner):
            fit = await service.run_blocking(
                lyapunov_drift, stepper, starts,
                derived_rng(s.seed, AUXILIARY_DOMAIN, 3), s.drift_inner
            )
        await service.write_table(
            'lyapunov_drift',
            ('alpha', 'beta', 'max_residual', 'n_starts', 'n_inner'),
            [(fit.alpha, fit.beta, fit.max_residual, s.drift_starts,
              s.drift_inner)]
        )
        outcome.tables.append('lyapunov_drift')
        outcome.summary['lyapunov_alpha'] = fit.alpha
        # alpha in the open interval (0, 1)
        checks.add('lyapunov_alpha', fit.alpha,
                   math.nextafter(0.0, 1.0), math.nextafter(1.0, 0.0))

    labels = list(s.initial_states)
    for name in s.observables:
        ref_mean, ref_se = reference[name]
        for label in labels:
            m, se = finals[(name, label)]
            tol = s.tolerance_factor * math.hypot(se, ref_se)
            checks.add('oracle_{}_{}'.format(name, label), abs(m - ref_mean),
                       upper=tol)
        for a, b in itertools.combinations(labels, 2):
            (ma, sa), (mb, sb) = finals[(name, a)], finals[(name, b)]
            checks.add('pairwise_{}_{}_{}'.format(name, a, b), abs(ma - mb),
                       upper=s.tolerance_factor * math.hypot(sa, sb))

    await _write_checks(service, outcome, checks)
    return outcome


async def cmd_distribution(service: ExperimentService) -> CommandOutcome:
    cfg = service.config
    s = cfg.run
    assert isinstance(s, DistributionSettings)
    outcome = CommandOutcome()
    checks = _Checks()

    steps = [int(round(t / s.h)) for t in s.times]
    chain = _chain_config(
        cfg,
        h=s.h,
        n_steps=max(steps),
        n_paths=s.n_paths,
        initial_state=np.asarray(s.initial_state),
        snapshot_steps=tuple(steps)
    )
    with logutils.timed(service.logger, 'CHAIN', n_steps=max(steps),
                        n_paths=s.n_paths):
        res: ChainResult = await service.run_blocking(
            run_chain, chain, service.executor
        )
    _log(service, 'DIVERGED PATHS', diverged=res.n_diverged)
    _require_survivors('h = {}'.format(s.h), s.n_paths - res.n_diverged)

    rng2d = (s.range, s.range)
    ref = GibbsReference.build(cfg.model.potential)
    pi_rng = derived_rng(s.seed, ORACLE_DOMAIN)

    def pi_sampler(n: int) -> np.ndarray:
        return gibbs_sample(ref, cfg.model, pi_rng, n)

    pi_samples = pi_sampler(s.n_paths)
    pi_hist = histogram2d(pi_samples, s.bins, rng2d)
    baseline, baseline_sd = same_law_tv_baseline(
        pi_sampler, s.n_paths, s.bins, rng2d, s.baseline_replicates
    )
    grid_header = ('v', 'x', 'density')
    for name, grid in (('histogram_pi', pi_hist),
                       ('kde_pi', kde2d(pi_samples, s.kde_bins, rng2d))):
        await service.write_table(name, grid_header, grid.rows())
        outcome.tables.append(name)

    tv_rows = []
    for t, n in zip(s.times, steps):
        snap = res.snapshots[n]
        hist = histogram2d(snap, s.bins, rng2d)
        tv = total_variation(hist, pi_hist)
        v = snap[:, 0]
        # the v-marginal of pi is N(0, 1)
        ks = ks_standard_normal(v[np.isfinite(v)])
        tv_rows.append((t, tv, baseline, baseline_sd, ks))
        for prefix, grid in (('histogram', hist),
                             ('kde', kde2d(snap, s.kde_bins, rng2d))):
            name = '{}_t{}'.format(prefix, _t_label(t))
            await service.write_table(name, grid_header, grid.rows())
            outcome.tables.append(name)
    await service.write_table(
        'tv_summary',
        ('t', 'tv_distance', 'baseline_tv', 'baseline_sd', 'ks_v_pvalue'),
        tv_rows
    )
    outcome.tables.append('tv_summary')

    checks.add('tv_final_vs_baseline', tv_rows[-1][1],
               upper=s.tolerance_factor * baseline)
    if len(tv_rows) > 1:
        checks.add('tv_decreases', tv_rows[0][1] - tv_rows[-1][1], lower=0.0)
    await _write_checks(service, outcome, checks)
    return outcome


def _determinant_residual(cfg: RunConfig, draws: int, seed: int) -> float:
    '''Max relative gap of closed-form vs LU determinant of dG/dYbar.'''
    rng = derived_rng(seed, AUXILIARY_DOMAIN, 0)
    params = cfg.model
    n_h = max(1, math.isqrt(draws))
    per_h = max(1, draws // n_h)
    threshold = h_star(params)
    worst = 0.0
    for h in rng.uniform(0.0, threshold, n_h):
        stepper = StepperConfig(params=params, h=max(float(h), 1e-6))
        y_bar = rng.uniform(-3.0, 3.0, (per_h, params.dim))
        y_n = rng.uniform(-3.0, 3.0, (per_h, params.dim))
        jac = jacobians(y_bar, y_n, stepper)
        F1, _ = f1_f2(params.potential, y_n[:, -1], y_bar[:, -1])
        closed = closed_form_det(F1, stepper)
        numeric = np.linalg.det(jac.dG_dYbar)
        worst = max(worst, float(np.max(np.abs(closed - numeric)
                                        / np.abs(numeric))))
    return worst


def _transfer_matrix_gap(cfg: RunConfig, stepper: StepperConfig,
                         n_states: int, seed: int) -> float:
    '''Max entry gap of A_n against finite differences of the step map.'''
    rng = derived_rng(seed, AUXILIARY_DOMAIN, 1)
    y_n = rng.uniform(-3.0, 3.0, (n_states, cfg.model.dim))
    rec = split_step(y_n, NoiseBlock.zeros(stepper, n_states), stepper)
    A = jacobians(rec.y_bar, y_n, stepper).A_n
    return float(np.max(np.abs(A - step_jacobian_fd(y_n, stepper))))


async def cmd_malliavin(service: ExperimentService) -> CommandOutcome:
    cfg = service.config
    s = cfg.run
    assert isinstance(s, MalliavinSettings)
    outcome = CommandOutcome()
    checks = _Checks()

    series_rows: List[Tuple] = []
    summary_rows: List[Tuple] = []
    medians: List[float] = []
    worst_det = 0.0
    positive = True
    for h in s.levels:
        n_steps = int(round(s.T / h))
        chain = _chain_config(
            cfg,
            h=h,
            n_steps=n_steps,
            n_paths=s.n_paths,
            initial_state=np.asarray(s.initial_state),
            track_malliavin=True
        )
        with logutils.timed(service.logger, 'MALLIAVIN CHAIN', h=h,
                            n_steps=n_steps, n_paths=s.n_paths):
            res: ChainResult = await service.run_blocking(
                run_chain, chain, service.executor
            )
        _require_survivors('h = {}'.format(h), s.n_paths - res.n_diverged)
        lam = res.lambda_min
        for j in range(s.n_paths):
            for i in range(n_steps):
                if np.isfinite(lam[i, j]):
                    series_rows.append(
                        (h, j, i + 1, float(lam[i, j]),
                         float(res.det_values[i, j]))
                    )
        alive = res.alive
        later = lam[1:, alive]
        if later.size:
            positive = positive and bool(np.all(later > 0))
        final = lam[-1, alive]
        median = float(np.median(final))
        medians.append(median)
        worst_det = max(worst_det, res.det_residual)
        summary_rows.append(
            (h, median, float(np.nanmin(lam[:, alive])), res.n_diverged)
        )

    await service.write_table(
        'lambda_min', ('h', 'path', 'n', 'lambda_min', 'det_dG_dYbar'),
        series_rows
    )
    await service.write_table(
        'malliavin_summary',
        ('h', 'median_final_lambda_min', 'min_lambda_min', 'n_diverged'),
        summary_rows
    )
    outcome.tables.extend(['lambda_min', 'malliavin_summary'])

    checks.add('lambda_min_positive', 1.0 if positive else 0.0, lower=1.0)
    if len(s.levels) > 1 and all(m > 0 for m in medians):
        checks.add('lambda_min_slope', order_regression(s.levels, medians),
                   lower=s.slope_min)
    checks.add('det_residual_trajectories', worst_det, upper=s.det_tolerance)
    checks.add('det_residual_random',
               _determinant_residual(cfg, s.det_draws, s.seed),
               upper=s.det_tolerance)
    stepper = StepperConfig(
        params=cfg.model, h=s.levels[0], newton_tol=s.newton_tol,
        newton_max_iter=s.newton_max_iter, override_hstar=s.override_hstar
    )
    checks.add('transfer_matrix_fd',
               _transfer_matrix_gap(cfg, stepper, s.fd_states, s.seed),
               upper=s.fd_tolerance)

    await _write_checks(service, outcome, checks)
    return outcome


async def cmd_simulate(service: ExperimentService) -> CommandOutcome:
    cfg = service.config
    s = cfg.run
    assert isinstance(s, SimulateSettings)
    outcome = CommandOutcome()

    chain = _chain_config(
        cfg,
        h=s.h,
        n_steps=s.n_steps,
        n_paths=s.n_paths,
        initial_state=np.asarray(s.initial_state),
        trajectory_stride=s.stride,
        scheme=s.scheme
    )
    res: ChainResult = await service.run_blocking(
        run_chain, chain, service.executor
    )
    _log(service, 'DIVERGED PATHS', scheme=s.scheme, diverged=res.n_diverged)

    k = cfg.model.k
    header = ('t', 'path', 'v', *('z{}'.format(i + 1) for i in range(k)),
              'x', 'diverged')
    rows = []
    for r, step in enumerate(chain.trajectory_steps):
        for j in range(s.n_paths):
            rows.append((float(step * s.h), j,
                         *(float(c) for c in res.trajectory[r, j]),
                         bool(res.trajectory_diverged[r, j])))
    await service.write_table('trajectory', header, rows)
    outcome.tables.append('trajectory')
    outcome.summary['diverged'] = res.n_diverged
    return outcome


COMMANDS: Mapping[
    ExperimentKind, Callable[[ExperimentService], Awaitable[CommandOutcome]]
] = {
    ExperimentKind.converge: cmd_converge,
    ExperimentKind.ergodic: cmd_ergodic,
    ExperimentKind.distribution: cmd_distribution,
    ExperimentKind.malliavin: cmd_malliavin,
    ExperimentKind.simulate: cmd_simulate,
}


def command_for(kind: ExperimentKind) -> Callable[
    [ExperimentService], Awaitable[CommandOutcome]
]:
    return COMMANDS[kind]

