import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from implicitpcc.partition import (CubeSet, GridParams, build_cube_set,
                                   candidate_array, candidate_count, contains,
                                   contains_many, iterate_candidates,
                                   sample_candidate, sample_candidates)
from implicitpcc.pointcloud import VoxelizedCloud


def test_cube_of_point():
    cs = build_cube_set(VoxelizedCloud(10, [[513, 0, 1023]]), 5)
    np.testing.assert_array_equal(cs.cubes, [[16, 0, 31]])


def test_whole_space_cube():
    cs = build_cube_set(VoxelizedCloud(4, [[1, 2, 3], [15, 0, 9]]), 0)
    np.testing.assert_array_equal(cs.cubes, [[0, 0, 0]])
    assert candidate_count(cs) == 16 ** 3


def test_voxel_sized_cubes():
    cloud = VoxelizedCloud(4, [[1, 2, 3], [15, 0, 9], [0, 0, 0]])
    cs = build_cube_set(cloud, 4)
    np.testing.assert_array_equal(cs.cubes, cloud.points)
    assert candidate_count(cs) == len(cs)
    assert list(iterate_candidates(cs)) == [tuple(p) for p in cloud.points]


def test_candidate_count():
    rng = np.random.default_rng(3)
    keys = rng.choice(32 ** 3, 100, replace=False)
    cubes = np.stack([keys // 1024, keys // 32 % 32, keys % 32], 1)
    cs = CubeSet(GridParams(10, 5), cubes)
    assert candidate_count(cs) == 3_276_800
    assert candidate_count(CubeSet(GridParams(10, 5), np.empty((0, 3)))) == 0


def test_contains():
    cs = CubeSet(GridParams(10, 5), [[16, 0, 31]])
    assert contains(cs, (527, 31, 1008))
    assert not contains(cs, (544, 31, 1023))
    empty = CubeSet(GridParams(10, 5), np.empty((0, 3)))
    assert not contains(empty, (0, 0, 0))


def test_grid_params_validation():
    with pytest.raises(ValueError):
        GridParams(5, 6)
    with pytest.raises(ValueError):
        CubeSet(GridParams(5, 2), [[4, 0, 0]])


def test_single_voxel_cube_sampling():
    cs = CubeSet(GridParams(4, 4), [[3, 9, 1]])
    rng = np.random.default_rng(0)
    assert {sample_candidate(cs, rng) for _ in range(20)} == {(3, 9, 1)}


def test_sampling_uniform_chi_square():
    cs = CubeSet(GridParams(3, 2), [[0, 0, 0], [3, 1, 2]])
    rng = np.random.default_rng(7)
    v = sample_candidates(cs, rng, 10 ** 6)
    cand = candidate_array(cs)
    assert len(cand) == 16
    lookup = {tuple(c): i for i, c in enumerate(cand)}
    keys = (v[:, 0] * 64 + v[:, 1] * 8 + v[:, 2])
    uniq, counts = np.unique(keys, return_counts=True)
    assert len(uniq) == 16
    for u in uniq:
        assert (u // 64, u // 8 % 8, u % 8) in lookup
    assert np.all(np.abs(counts / 1e6 - 1 / 16) < 3 * np.sqrt(
        (1 / 16) * (15 / 16) / 1e6))
    assert chisquare(counts).pvalue > 1e-4


def test_empty_sampling_raises():
    cs = CubeSet(GridParams(3, 2), np.empty((0, 3)))
    with pytest.raises(ValueError):
        sample_candidates(cs, np.random.default_rng(0), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
def test_candidates_cover_cloud_exactly_once(bits, seed, count):
    rng = np.random.default_rng(seed)
    pts = np.unique(rng.integers(0, 1 << bits, (count, 3)), axis=0)
    cloud = VoxelizedCloud(bits, pts)
    m = int(rng.integers(0, bits + 1))
    cs = build_cube_set(cloud, m)
    cand = candidate_array(cs)
    assert len(cand) == candidate_count(cs)
    assert len(np.unique(cand, axis=0)) == len(cand)
    assert contains_many(cs, cloud.points).all()
    # brute force: every candidate lies in a cube of some point
    edge = 1 << (bits - m)
    cubes = {tuple(p // edge) for p in pts}
    assert all(tuple(c // edge) in cubes for c in cand)
