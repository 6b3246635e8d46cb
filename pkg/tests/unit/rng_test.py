# Copyright (c) 2026. All rights reserved.

import unittest

import numpy as np

from avfgle.montecarlo.density import ks_standard_normal
from avfgle.montecarlo.rng import (
    BOOTSTRAP_DOMAIN, ORACLE_DOMAIN, NoiseStream, derived_rng,
    normals_for_paths
)


class NoiseStreamTest(unittest.TestCase):
    def test_chunks_are_addressable(self) -> None:
        a = NoiseStream(42, 7).chunk(3, (256, 4))
        b = NoiseStream(42, 7).chunk(3, (256, 4))
        np.testing.assert_array_equal(a, b)

        # chunk 3 does not depend on chunks 0..2 having been drawn
        stream = NoiseStream(42, 7)
        for c in range(3):
            stream.chunk(c, (256, 4))
        np.testing.assert_array_equal(stream.chunk(3, (256, 4)), a)

    def test_streams_differ(self) -> None:
        base = NoiseStream(1, 0).chunk(0, (64,))
        self.assertFalse(np.allclose(base, NoiseStream(1, 1).chunk(0, (64,))))
        self.assertFalse(np.allclose(base, NoiseStream(2, 0).chunk(0, (64,))))
        self.assertFalse(np.allclose(base, NoiseStream(1, 0).chunk(1, (64,))))

    def test_standard_normal(self) -> None:
        x = NoiseStream(5, 11).chunk(0, (20000,))
        self.assertGreater(ks_standard_normal(x), 1e-3)

    def test_invalid_ids(self) -> None:
        with self.assertRaises(ValueError):
            NoiseStream(-1, 0)
        with self.assertRaises(ValueError):
            NoiseStream(0, -3)


class NormalsForPathsTest(unittest.TestCase):
    def test_independent_of_grouping(self) -> None:
        whole = normals_for_paths(9, range(0, 6), 2, 10, 4)
        self.assertEqual(whole.shape, (6, 10, 4))
        part = normals_for_paths(9, range(3, 5), 2, 10, 4)
        np.testing.assert_array_equal(whole[3:5], part)
        np.testing.assert_array_equal(
            whole[1], NoiseStream(9, 1).chunk(2, (10, 4))
        )

    def test_empty_range(self) -> None:
        self.assertEqual(normals_for_paths(0, range(0), 0, 5, 2).shape,
                         (0, 5, 2))


class DerivedRngTest(unittest.TestCase):
    def test_domains_are_separate(self) -> None:
        a = derived_rng(3, BOOTSTRAP_DOMAIN).random(8)
        b = derived_rng(3, ORACLE_DOMAIN).random(8)
        c = derived_rng(3, ORACLE_DOMAIN, 1).random(8)
        self.assertFalse(np.allclose(a, b))
        self.assertFalse(np.allclose(b, c))
        np.testing.assert_array_equal(
            a, derived_rng(3, BOOTSTRAP_DOMAIN).random(8)
        )


if __name__ == '__main__':
    unittest.main()
