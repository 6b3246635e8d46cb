# Copyright (c) 2020-2026. All rights reserved.

import aiotask_context as context  # type: ignore
from contextlib import contextmanager
import logfmt  # type: ignore
import logging
import numbers
import re
import time
import traceback
from typing import Any, Dict, Iterator

import numpy as np

LOG_CONTEXT = 'log_context'

FLOAT_FORMAT = '{:.6g}'


def get_log_context() -> Dict:
    # Outside a task created by the context task factory there is no
    # context to attach; callers then log the explicit fields only.
    try:
        log_context = context.get(LOG_CONTEXT)
        if log_context is None:
            log_context = {}
            context.set(LOG_CONTEXT, log_context)
    except (AttributeError, RuntimeError, ValueError):
        return {}

    return log_context


def set_log_context(**kwargs) -> None:
    log_context = get_log_context()
    log_context.update(kwargs)


def clear_log_context() -> None:
    log_context = get_log_context()
    log_context.clear()


def _plain(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        return FLOAT_FORMAT.format(float(value))
    if isinstance(value, np.ndarray):
        return ','.join(str(_plain(v)) for v in value.ravel())
    return value


def log(
    logger: logging.Logger,
    lvl: int,
    include_context: bool = False,
    **kwargs
) -> None:
    if not logger.isEnabledFor(lvl):
        return

    all_info = {**get_log_context(), **kwargs} if include_context else kwargs

    info = {
        k: _plain(v) for k, v in all_info.items()
        if k not in ['exc_info', 'stack_info', 'extra']
    }

    exc_info = all_info.get('exc_info')

    if exc_info:  # (typ, value, tb)
        trace = '\t'.join(traceback.format_exception(*exc_info))
        info['trace'] = re.sub(r'[\r\n]+', '\t', trace)

    msg = next(logfmt.format(info))
    logger.log(lvl, msg)


@contextmanager
def timed(
    logger: logging.Logger,
    message: str,
    lvl: int = logging.INFO,
    **kwargs
) -> Iterator[Dict]:
    '''
    Logs `message` with the elapsed wall time once the block exits. Fields
    added to the yielded dict inside the block are logged as well.
    '''
    fields: Dict = {}
    start = time.perf_counter()
    try:
        yield fields
    finally:
        log(
            logger,
            lvl,
            include_context=True,
            message=message,
            time_ms=1000.0 * (time.perf_counter() - start),
            **kwargs,
            **fields
        )
