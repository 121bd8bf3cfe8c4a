import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicitpcc.pointcloud import (DegenerateCloudError, PlyHeaderError,
                                    PlyPropertyTypeError, PlyTruncatedError,
                                    RawCloud, VoxelizedCloud, VoxelTransform,
                                    parse_ply, voxelize, voxelize_sequence,
                                    voxelize_with, write_ply)

ASCII_COLORED = b"""ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
0 0 0 255 0 0
1 2 3 0 255 0
4.5 5 6 0 0 255
"""


def test_ascii_with_colors():
    cloud = parse_ply(ASCII_COLORED)
    assert len(cloud) == 3
    assert cloud.colors is not None
    np.testing.assert_array_equal(cloud.positions[2], [4.5, 5, 6])
    np.testing.assert_array_equal(cloud.colors[1], [0, 255, 0])


def test_xyz_only_has_no_colors():
    data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\n" \
           b"property double y\nproperty double z\nend_header\n1 2 3\n"
    assert parse_ply(data).colors is None


def test_truncated_ascii():
    data = ASCII_COLORED.replace(b"vertex 3", b"vertex 5")
    with pytest.raises(PlyTruncatedError):
        parse_ply(data)


def test_truncated_binary():
    cloud = VoxelizedCloud(4, [[1, 2, 3], [4, 5, 6]], [[1, 2, 3], [4, 5, 6]])
    data = write_ply(cloud)
    with pytest.raises(PlyTruncatedError):
        parse_ply(data[:-1])


def test_header_errors():
    with pytest.raises(PlyHeaderError):
        parse_ply(b"plx\n")
    with pytest.raises(PlyHeaderError):
        parse_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n")
    with pytest.raises(PlyHeaderError) as info:
        parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                  b"property float x\nproperty float y\nend_header\n0 0\n")
    assert "'z'" in str(info.value)
    with pytest.raises(PlyPropertyTypeError):
        parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                  b"property quad x\nend_header\n")


def test_skips_elements_before_vertices():
    head = (b"ply\nformat binary_little_endian 1.0\nelement camera 2\n"
            b"property int a\nelement vertex 1\nproperty float x\n"
            b"property float y\nproperty float z\nend_header\n")
    body = np.array([7, 8], "<i4").tobytes() + np.array(
        [1, 2, 3], "<f4").tobytes()
    np.testing.assert_array_equal(parse_ply(head + body).positions, [[1, 2, 3]])


def test_voxelize_corners():
    vox, t = voxelize(RawCloud([[0, 0, 0], [1, 1, 1]]), 1)
    np.testing.assert_array_equal(vox.points, [[0, 0, 0], [1, 1, 1]])
    assert t.is_identity


def test_voxelize_merges_colors_with_mean():
    raw = RawCloud([[0.0, 0, 0], [0.1, 0, 0], [10, 10, 10]],
                   [[10, 10, 10], [20, 20, 20], [0, 0, 0]])
    vox, _ = voxelize(raw, 3)
    assert len(vox) == 2
    np.testing.assert_array_equal(vox.colors[0], [15, 15, 15])


def test_merge_rounds_half_up():
    raw = RawCloud([[0.0, 0, 0], [0.01, 0, 0], [7, 7, 7]],
                   [[10, 0, 0], [11, 0, 0], [0, 0, 0]])
    vox, _ = voxelize(raw, 3)
    assert vox.colors[0, 0] == 11


def test_voxelize_integer_input_is_identity():
    pts = [[3, 0, 7], [1, 2, 5], [7, 7, 7]]
    vox, t = voxelize(RawCloud(pts), 3)
    assert t.is_identity
    assert vox == VoxelizedCloud(3, pts)


def test_voxelize_degenerate():
    with pytest.raises(DegenerateCloudError):
        voxelize(RawCloud([[0.5, 0.5, 0.5]] * 3), 4)


def test_voxelize_scale_uses_longest_axis():
    raw = RawCloud([[0.0, 0, 0], [2.0, 1.0, 0.5]])
    vox, t = voxelize(raw, 4)
    np.testing.assert_array_equal(vox.points, [[0, 0, 0], [15, 8, 4]])
    np.testing.assert_allclose(t.inverse([[15, 0, 0]]), [[2.0, 0, 0]])


def test_voxelize_with_matches_voxelize():
    rng = np.random.default_rng(0)
    raw = RawCloud(rng.normal(size=(200, 3)))
    vox, t = voxelize(raw, 6)
    assert voxelize_with(raw, 6, t) == vox


def test_sequence_shares_one_transform():
    a = RawCloud([[0.0, 0, 0], [1.0, 1, 1]])
    b = RawCloud([[0.5, 0.5, 0.5], [3.0, 0, 0]])
    (va, vb), t = voxelize_sequence([a, b], 4)
    assert t.scale == (5.0,) * 3
    np.testing.assert_array_equal(vb.points[-1], [15, 0, 0])
    np.testing.assert_array_equal(va.points[-1], [5, 5, 5])


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        VoxelizedCloud(3, [[1, 1, 1], [1, 1, 1]])


def test_order_independent_equality():
    a = VoxelizedCloud(3, [[1, 0, 0], [0, 1, 0]], [[1, 1, 1], [2, 2, 2]])
    b = VoxelizedCloud(3, [[0, 1, 0], [1, 0, 0]], [[2, 2, 2], [1, 1, 1]])
    assert a == b


def test_write_single_point_and_no_colors():
    data = write_ply(VoxelizedCloud(5, [[1, 2, 3]]))
    assert b"element vertex 1" in data
    assert b"red" not in data


def test_write_with_transform():
    t = VoxelTransform((2.0,) * 3, (1.0, 0.0, -1.0))
    data = write_ply(VoxelizedCloud(4, [[4, 4, 4]]), t)
    np.testing.assert_allclose(parse_ply(data).positions, [[3.0, 2.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(1, 60), st.booleans(),
       st.integers(0, 2 ** 32 - 1))
def test_write_parse_voxelize_roundtrip(bits, count, colored, seed):
    rng = np.random.default_rng(seed)
    n = 1 << bits
    pts = np.unique(rng.integers(0, n, (count, 3)), axis=0)
    col = rng.integers(0, 256, (len(pts), 3)) if colored else None
    cloud = VoxelizedCloud(bits, pts, col)
    back, t = voxelize(parse_ply(write_ply(cloud)), bits)
    assert t.is_identity
    assert back == cloud
