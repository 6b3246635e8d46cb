# Copyright (c) 2020-2026. All rights reserved.

import aiotask_context as context  # type: ignore
import asyncio
from concurrent.futures import Executor, ProcessPoolExecutor
import logging
from typing import Any, Awaitable, Callable, Optional, Sequence
import uuid

from avfgle.datamodel import RunConfig
from avfgle.store.store_engines import create_result_store

import avfgle.utils.logutils as logutils

RESOLVED_CONFIG_NAME = 'resolved_config.yaml'


class NumericalFailure(RuntimeError):
    pass


class ExperimentService:
    def __init__(
        self,
        config: RunConfig,
        logger: logging.Logger,
        workers: int = 1
    ) -> None:
        if workers < 1:
            raise ValueError('workers has invalid value {}'.format(workers))
        self.config = config
        self.result_store = create_result_store(config.result_store)
        self.logger = logger
        self.workers = workers
        self.executor: Optional[Executor] = None
        self.loop = asyncio.new_event_loop()
        self.loop.set_task_factory(context.task_factory)

    def start(self):
        asyncio.set_event_loop(self.loop)
        if self.workers > 1:
            self.executor = ProcessPoolExecutor(max_workers=self.workers)
        self.loop.run_until_complete(self.result_store.start())

    def stop(self):
        self.loop.run_until_complete(self.result_store.stop())
        if self.executor is not None:
            self.executor.shutdown()
            self.executor = None
        self.loop.run_until_complete(self.loop.shutdown_asyncgens())
        self.loop.close()

    def run(
        self,
        command: Callable[['ExperimentService'], Awaitable[Any]]
    ) -> Any:
        return self.loop.run_until_complete(self._run(command))

    async def _run(
        self,
        command: Callable[['ExperimentService'], Awaitable[Any]]
    ) -> Any:
        logutils.set_log_context(
            run_id=uuid.uuid4().hex,
            experiment=self.config.experiment.value,
            seed=self.config.run.seed
        )
        logutils.log(
            self.logger,
            logging.INFO,
            include_context=True,
            message='STARTING',
            service_name=self.config.service_name,
            workers=self.workers
        )
        await self.result_store.write_text(
            RESOLVED_CONFIG_NAME, self.config.to_yaml()
        )
        try:
            outcome = await command(self)
        except Exception:
            logutils.log(
                self.logger,
                logging.ERROR,
                include_context=True,
                message='FAILED',
                service_name=self.config.service_name
            )
            raise
        logutils.log(
            self.logger,
            logging.INFO,
            include_context=True,
            message='STOPPED',
            service_name=self.config.service_name
        )
        return outcome

    async def run_blocking(self, fn: Callable, *args) -> Any:
        # numerics run off the loop; `fn` fans out to self.executor itself
        return await self.loop.run_in_executor(None, fn, *args)

    async def write_table(
        self,
        name: str,
        header: Sequence[str],
        rows: Sequence[Sequence]
    ) -> None:
        await self.result_store.write_table(name, header, rows)
        logutils.log(
            self.logger,
            logging.INFO,
            include_context=True,
            message='TABLE WRITTEN',
            table=name,
            rows=len(rows)
        )
