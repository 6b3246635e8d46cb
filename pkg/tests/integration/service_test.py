# Copyright (c) 2020-2026. All rights reserved.

import logging
import logging.config
import unittest

from avfgle import LOGGER_NAME
from avfgle.cli.commands import CommandOutcome, cmd_simulate, command_for
from avfgle.datamodel import ExperimentKind, load_run_config
from avfgle.service import (
    RESOLVED_CONFIG_NAME, ExperimentService, NumericalFailure
)

from data import run_config_suite


class ExperimentServiceWithInMemoryStoreTest(unittest.TestCase):
    def setUp(self) -> None:
        self.config = load_run_config(run_config_suite()['simulate_small'])
        logging.config.dictConfig(dict(self.config.logging))
        logger = logging.getLogger(LOGGER_NAME)

        self.service = ExperimentService(
            config=self.config,
            logger=logger
        )
        self.service.start()

    def tearDown(self) -> None:
        self.service.stop()

    def read(self, coro):
        return self.service.loop.run_until_complete(coro)

    def test_simulate(self) -> None:
        outcome = self.service.run(cmd_simulate)
        self.assertIsInstance(outcome, CommandOutcome)
        self.assertEqual(outcome.tables, ['trajectory'])
        self.assertTrue(outcome.passed)
        self.assertEqual(outcome.summary['diverged'], 0)

        store = self.service.result_store
        self.assertEqual(self.read(store.list_tables()), ['trajectory'])
        header, rows = self.read(store.read_table('trajectory'))
        self.assertEqual(
            header, ('t', 'path', 'v', 'z1', 'z2', 'z3', 'x', 'diverged')
        )
        # steps 0, 2, 4, 6, 8 for two paths
        self.assertEqual(len(rows), 10)
        self.assertEqual([r[0] for r in rows[::2]],
                         [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual(rows[0][2:7], (1.0, 1.0, 1.0, 1.0, 1.0))
        self.assertFalse(any(r[7] for r in rows))

    def test_resolved_config_written(self) -> None:
        self.service.run(command_for(ExperimentKind.simulate))
        text = self.read(
            self.service.result_store.read_text(RESOLVED_CONFIG_NAME)
        )
        again = load_run_config(text)
        self.assertEqual(again.to_api_dm(), self.config.to_api_dm())

    def test_failure_propagates(self) -> None:
        async def failing(service: ExperimentService) -> None:
            raise NumericalFailure('every path diverged')

        with self.assertRaises(NumericalFailure):
            self.service.run(failing)
        store = self.service.result_store
        # the config is on record even though the command failed
        self.assertEqual(self.read(store.list_names()),
                         [RESOLVED_CONFIG_NAME])
        self.assertEqual(self.read(store.list_tables()), [])
        again = load_run_config(
            self.read(store.read_text(RESOLVED_CONFIG_NAME))
        )
        self.assertEqual(again.to_api_dm(), self.config.to_api_dm())

    def test_invalid_workers(self) -> None:
        with self.assertRaises(ValueError):
            ExperimentService(self.config, logging.getLogger(LOGGER_NAME),
                              workers=0)


if __name__ == '__main__':
    unittest.main()
