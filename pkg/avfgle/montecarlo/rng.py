# Copyright (c) 2026. All rights reserved.

'''
Counter-based random streams. A path's noise is addressed by
(master_seed, path_index, chunk_index): the Philox key comes from the seed
and the path, the chunk index sits in a high word of the counter, so any
chunk of any path can be regenerated without touching the others.
'''

from typing import Tuple

import numpy as np

PATH_DOMAIN = 0
BOOTSTRAP_DOMAIN = 1
ORACLE_DOMAIN = 2
AUXILIARY_DOMAIN = 3

# steps per addressable chunk; each chunk consumes far fewer than 2^64
# counter increments, so chunks never overlap
CHUNK_STEPS = 256


def _key(master_seed: int, *tags: int) -> np.ndarray:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tags)
    return seq.generate_state(2, dtype=np.uint64)


class NoiseStream:
    def __init__(self, master_seed: int, path_index: int) -> None:
        if master_seed < 0 or path_index < 0:
            raise ValueError(
                'stream ids must be nonnegative: {}'.format(
                    (master_seed, path_index)
                )
            )
        self.master_seed = int(master_seed)
        self.path_index = int(path_index)
        self._key = _key(master_seed, PATH_DOMAIN, path_index)

    def chunk(self, chunk_index: int, shape: Tuple[int, ...]) -> np.ndarray:
        bit_generator = np.random.Philox(
            key=self._key,
            counter=np.array([0, 0, chunk_index, 0], dtype=np.uint64)
        )
        return np.random.Generator(bit_generator).standard_normal(shape)


def normals_for_paths(
    master_seed: int,
    path_indices: range,
    chunk_index: int,
    n_steps: int,
    width: int
) -> np.ndarray:
    '''Standard normals of shape (n_paths, n_steps, width).'''
    return np.stack([
        NoiseStream(master_seed, j).chunk(chunk_index, (n_steps, width))
        for j in path_indices
    ]) if len(path_indices) else np.zeros((0, n_steps, width))


def derived_rng(
    master_seed: int,
    domain: int,
    *tags: int
) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=_key(master_seed, domain, *tags))
    )
