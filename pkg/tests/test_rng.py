from __future__ import annotations

import numpy as np

from qsdde.rng import TrajectoryStreams, block_size, spawn_generator


def test_streams_reproducible():
    a = TrajectoryStreams(123, (0,), 8).normal_block(32)
    b = TrajectoryStreams(123, (0,), 8).normal_block(32)
    assert np.array_equal(a, b)


def test_streams_order_independent():
    big = TrajectoryStreams(99, (2, 1), 16).normal_block(40)
    small = TrajectoryStreams(99, (2, 1), 5).normal_block(40)
    assert np.array_equal(big[:5], small)


def test_streams_blocking_invariant():
    s1 = TrajectoryStreams(5, (0,), 4)
    parts = np.concatenate([s1.normal_block(7), s1.normal_block(13)], axis=1)
    s2 = TrajectoryStreams(5, (0,), 4)
    assert np.array_equal(parts, s2.normal_block(20))


def test_distinct_paths_and_seeds_differ():
    base = TrajectoryStreams(7, (0,), 4).normal_block(16)
    other_path = TrajectoryStreams(7, (1,), 4).normal_block(16)
    other_seed = TrajectoryStreams(8, (0,), 4).normal_block(16)
    assert not np.allclose(base, other_path)
    assert not np.allclose(base, other_seed)


def test_uniforms_in_unit_interval():
    u = TrajectoryStreams(3, (0,), 6).uniform_block(1000)
    assert u.min() >= 0.0 and u.max() < 1.0
    # crude uniformity: mean within 5 standard errors of 1/2
    assert abs(u.mean() - 0.5) < 5.0 / np.sqrt(12 * u.size)


def test_spawn_generator_deterministic():
    g1 = spawn_generator(11, (4, 2))
    g2 = spawn_generator(11, (4, 2))
    assert np.array_equal(g1.standard_normal(9), g2.standard_normal(9))


def test_block_size_bounds():
    assert block_size(1, 1) == 64
    assert block_size(10 ** 9, 35) == 1
    assert 1 <= block_size(4096, 35) <= 64
