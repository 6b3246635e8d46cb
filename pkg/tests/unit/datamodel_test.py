# Copyright (c) 2020-2026. All rights reserved.

import unittest

import yaml

from avfgle.datamodel import (
    REFERENCE_INITIAL_STATES, ConfigError, ConvergeSettings,
    DistributionSettings, ErgodicSettings, ExperimentKind, MalliavinSettings,
    RunConfig,
    SettingError, SimulateSettings, load_run_config
)
from avfgle.model import reference_params

from data import initial_state_suite, run_config_suite

MODEL_TXT = '''
model:
  gamma: 5.0
  k: 3
  alpha: 3.0
  lambda: 2.0
  potential:
    preset: double_well
'''


def config_text(experiment: str, run: str = '') -> str:
    return '''
service:
  name: datamodel test
experiment: {}
{}
{}
'''.format(experiment, MODEL_TXT, run)


class SettingsTest(unittest.TestCase):
    def setUp(self) -> None:
        self.params = reference_params()

    def test_defaults(self) -> None:
        converge = ConvergeSettings().resolve(self.params)
        self.assertEqual(converge.levels,
                         tuple(2.0 ** -i for i in range(6, 11)))
        self.assertEqual(converge.n_paths, 2000)
        self.assertEqual(converge.initial_state, (1.0,) * 5)

        ergodic = ErgodicSettings().resolve(self.params)
        self.assertEqual(ergodic.initial_states,
                         dict(REFERENCE_INITIAL_STATES))

        dist = DistributionSettings().resolve(self.params)
        self.assertEqual(dist.T, 512.0)

        malliavin = MalliavinSettings().resolve(self.params)
        self.assertEqual(malliavin.levels[-1], 2.0 ** -8)

        simulate = SimulateSettings().resolve(self.params)
        self.assertEqual(simulate.scheme, 'avf')

    def test_reference_initial_states_match_fixtures(self) -> None:
        suite = initial_state_suite()
        for label, state in REFERENCE_INITIAL_STATES.items():
            val = suite[label]
            self.assertEqual(state, (val['v'], *val['z'], val['x']))

    def test_round_trip(self) -> None:
        s = ErgodicSettings(h=0.0625, T=8.0).resolve(self.params)
        again = ErgodicSettings.from_api_dm(s.to_api_dm())
        self.assertEqual(again, s)

    def test_unknown_key(self) -> None:
        with self.assertRaises(SettingError) as ctx:
            SimulateSettings.from_api_dm({'levels': [0.1]})
        self.assertEqual(ctx.exception.path, ('run', 'levels'))

    def test_invalid_settings(self) -> None:
        with self.assertRaises(SettingError):
            ConvergeSettings(levels=(0.1, 0.05)).resolve(self.params)
        with self.assertRaises(SettingError):
            ConvergeSettings(levels=(0.1, 0.04, 0.02)).resolve(self.params)
        with self.assertRaises(SettingError):
            ConvergeSettings(T=1.0, levels=(0.12, 0.06, 0.03)).resolve(
                self.params
            )
        with self.assertRaises(SettingError):
            DistributionSettings(times=()).resolve(self.params)
        with self.assertRaises(SettingError):
            ErgodicSettings(drift_starts=1).resolve(self.params)
        with self.assertRaises(SettingError):
            SimulateSettings(initial_state=(1.0, 2.0)).resolve(self.params)
        with self.assertRaises(SettingError):
            SimulateSettings(h=0.5).resolve(self.params)
        # the explicit scheme has no h* threshold
        self.assertEqual(
            SimulateSettings(h=0.5, scheme='em').resolve(self.params).h, 0.5
        )
        self.assertTrue(
            SimulateSettings(h=0.5, override_hstar=True).resolve(
                self.params
            ).override_hstar
        )


class RunConfigTest(unittest.TestCase):
    def test_load_small_configs(self) -> None:
        for name, text in run_config_suite().items():
            if name.startswith('invalid'):
                continue
            cfg = load_run_config(text)
            self.assertIsInstance(cfg, RunConfig, name)
            self.assertEqual(dict(cfg.result_store), {'memory': None})

    def test_resolved_config_reloads(self) -> None:
        text = run_config_suite()['ergodic_small']
        cfg = load_run_config(text)
        again = load_run_config(cfg.to_yaml())
        self.assertEqual(again.to_api_dm(), cfg.to_api_dm())
        self.assertEqual(again.experiment, ExperimentKind.ergodic)

    def test_overrides(self) -> None:
        text = run_config_suite()['simulate_small']
        cfg = load_run_config(text, overrides={
            'seed': 99,
            'zero_noise': True,
            'override_hstar': None,
            'out': '/tmp/avfgle-test-out',
        })
        self.assertEqual(cfg.run.seed, 99)
        self.assertTrue(cfg.run.zero_noise)
        self.assertFalse(cfg.run.override_hstar)
        self.assertEqual(dict(cfg.result_store),
                         {'fs': '/tmp/avfgle-test-out'})

    def test_schema_error_line(self) -> None:
        text = run_config_suite()['invalid_unknown_key']
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(text)
        line = text.splitlines().index('  n_stepz: 8') + 1
        self.assertEqual(ctx.exception.line, line)
        self.assertIn('line {}'.format(line), str(ctx.exception))

    def test_h_star_error_line(self) -> None:
        text = run_config_suite()['invalid_above_hstar']
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(text)
        self.assertEqual(ctx.exception.line,
                         text.splitlines().index('run:') + 1)
        self.assertIn('h*', ctx.exception.message)

        cfg = load_run_config(text, overrides={'override_hstar': True})
        self.assertTrue(cfg.run.override_hstar)

    def test_invalid_documents(self) -> None:
        with self.assertRaises(ConfigError):
            load_run_config('service: [unclosed')
        with self.assertRaises(ConfigError):
            load_run_config('- a list')
        with self.assertRaises(ConfigError):
            load_run_config(config_text('teleport'))
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(config_text('simulate').replace(
                'gamma: 5.0', 'gamma: -5.0'
            ))
        self.assertIsNotNone(ctx.exception.line)

    def test_model_section(self) -> None:
        cfg = load_run_config(config_text('simulate').replace(
            'preset: double_well',
            'coefficients: [0.0, 0.0, 0.5, 0.0, 0.25]'
        ))
        self.assertEqual(cfg.model.potential.hessian_lower_bound, 0.0)
        dumped = yaml.safe_load(cfg.to_yaml())
        self.assertEqual(dumped['model']['potential']['coefficients'],
                         [0.0, 0.0, 0.5, 0.0, 0.25])
        self.assertEqual(dumped['model']['alpha'], [3.0, 3.0, 3.0])


if __name__ == '__main__':
    unittest.main()
