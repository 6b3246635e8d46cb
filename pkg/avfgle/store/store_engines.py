# Copyright (c) 2020-2026. All rights reserved.

from typing import Dict

from avfgle.store.result_store import (
    AbstractResultStore, InMemoryResultStore, FilesystemResultStore
)


def create_result_store(result_store_config: Dict) -> AbstractResultStore:
    store_type = list(result_store_config.keys())[0]
    store_config = result_store_config[store_type]

    return {
        'memory': lambda cfg: InMemoryResultStore(),
        'fs': lambda cfg: FilesystemResultStore(cfg)
    }[store_type](store_config)
