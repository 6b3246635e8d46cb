# Copyright (c) 2020-2026. All rights reserved.

import argparse
import logging
import logging.config
import os
import sys
from typing import Optional, Sequence

from avfgle import LOGGER_NAME
from avfgle.cli.commands import command_for
from avfgle.datamodel import ConfigError, load_run_config
from avfgle.integrator import NonConvergence
from avfgle.malliavin import SingularJacobian
from avfgle.model import ObservableError
from avfgle.montecarlo.estimators import InsufficientPaths
from avfgle.service import ExperimentService, NumericalFailure

import avfgle.utils.logutils as logutils

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3
EXIT_CHECK_FAILED = 4

NUMERICAL_ERRORS = (
    NumericalFailure, NonConvergence, SingularJacobian, InsufficientPaths,
    ObservableError
)


def parse_args(args: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog='avfgle',
        description='Run a splitting AVF experiment for the lifted GLE'
    )

    parser.add_argument(
        '-c',
        '--config',
        required=True,
        type=argparse.FileType('r'),
        help='config file for %(prog)s'
    )

    parser.add_argument(
        '--out',
        default=None,
        help='write result tables to this directory instead of the '
        'store named in the config'
    )

    parser.add_argument(
        '--workers',
        type=int,
        default=os.cpu_count() or 1,
        help='worker processes for path blocks; default: %(default)s'
    )

    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help='master seed, overrides run.seed'
    )

    parser.add_argument(
        '--override-hstar',
        action='store_true',
        default=None,
        help='allow step sizes at or above h*'
    )

    parser.add_argument(
        '--zero-noise',
        action='store_true',
        default=None,
        help='deterministic mode: all noise increments are zero'
    )

    parser.add_argument(
        '--check',
        action='store_true',
        help='exit with status 4 if an acceptance check fails'
    )

    parser.add_argument(
        '-d',
        '--debug',
        action='store_true',
        help='turn on debug logging'
    )

    return parser.parse_args(args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    '''
    Runs the experiment named in the config file and returns the exit
    status.
    '''
    args = parse_args(argv)
    with args.config as f:
        text = f.read()

    try:
        config = load_run_config(text, overrides={
            'seed': args.seed,
            'zero_noise': args.zero_noise,
            'override_hstar': args.override_hstar,
            'out': args.out,
        })
    except ConfigError as e:
        print('config error: {}'.format(e), file=sys.stderr)
        return EXIT_CONFIG_ERROR

    logging.config.dictConfig(dict(config.logging))
    logger = logging.getLogger(LOGGER_NAME)
    if args.debug:
        logger.setLevel(logging.DEBUG)
    if config.run.override_hstar:
        logutils.log(
            logger,
            logging.WARNING,
            message='H* CHECK DISABLED',
            experiment=config.experiment.value
        )

    try:
        service = ExperimentService(config, logger, workers=args.workers)
    except ValueError as e:
        print('config error: {}'.format(e), file=sys.stderr)
        return EXIT_CONFIG_ERROR

    service.start()
    try:
        outcome = service.run(command_for(config.experiment))
    except NUMERICAL_ERRORS as e:
        logutils.log(
            logger,
            logging.ERROR,
            message='NUMERICAL FAILURE',
            error=type(e).__name__,
            reason=str(e)
        )
        return EXIT_NUMERICAL_FAILURE
    finally:
        service.stop()

    if args.check and not outcome.passed:
        failed = [name for name, ok in outcome.checks.items() if not ok]
        logutils.log(
            logger,
            logging.ERROR,
            message='CHECKS FAILED',
            failed=','.join(failed)
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
