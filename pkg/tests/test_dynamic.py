import dataclasses

import numpy as np
import pytest

from conftest import sphere_shell
from implicitpcc.attributes import AttrTrainConfig
from implicitpcc.bitstream import (SECTION_GEOMETRY, decode_indices,
                                   disassemble)
from implicitpcc.dynamic import (BezierConfig, DynamicMode, FrameGroup,
                                 bezier_sample, decode_group, encode_group,
                                 encode_static, split_groups)
from implicitpcc.geometry import GeomTrainConfig
from implicitpcc.metrics import bits_per_point
from implicitpcc.nn.network import NetworkArch, init_params
from implicitpcc.pointcloud import VoxelTransform

GARCH = NetworkArch(levels_spatial=3, residual_blocks=1, hidden_width=16,
                    block_width=8)
AARCH = NetworkArch(levels_spatial=2, residual_blocks=1, hidden_width=16,
                    block_width=8, output_dim=3, activation="sine",
                    omega0=30.0)
GEO = GeomTrainConfig(steps=150, batch_size=256, arch=GARCH)
ATTR = AttrTrainConfig(steps=60, batch_size=128, arch=AARCH)


def _color(pts):
    return np.where(pts[:, :1] < 16, [200, 30, 30], [30, 30, 200])


def _frames(count, colored=False):
    return [sphere_shell(radius=4.2 + 0.4 * t,
                         colors=_color if colored else None)
            for t in range(count)]


def test_split_groups():
    assert split_groups(list(range(70)), 32)[-1] == list(range(64, 70))
    assert len(split_groups(list(range(64)), 32)) == 2
    with pytest.raises(ValueError):
        split_groups([1], 0)


def test_mode_validation():
    with pytest.raises(ValueError):
        DynamicMode("curve")
    with pytest.raises(ValueError):
        DynamicMode("intra", bezier=BezierConfig())
    with pytest.raises(ValueError):
        DynamicMode("bogus")
    with pytest.raises(ValueError):
        BezierConfig(10)


def test_bezier_sample_endpoints():
    rng = np.random.default_rng(0)
    ctrl = [init_params(GARCH, rng) for _ in range(4)]
    assert bezier_sample(ctrl, 0, 6) == ctrl[0]
    assert bezier_sample(ctrl, 5, 6) == ctrl[-1]


@pytest.mark.parametrize("name", ["intra", "residual", "curve", "fourD"])
def test_modes_roundtrip(name):
    mode = DynamicMode(name, bezier=BezierConfig(2) if name == "curve"
                       else None, temporal_levels=2)
    group = FrameGroup(_frames(3, colored=True),
                       VoxelTransform((2.0,) * 3, (1.0, 2.0, 3.0)))
    res = encode_group(group, mode, GEO, ATTR, cube_bits=2,
                       threshold_steps=20)
    dec = decode_group(res.data)
    assert len(dec.frames) == 3
    assert dec.header.mode == name
    assert dec.transform == group.transform
    for a, b in zip(dec.frames, res.reconstruction):
        assert a == b
        assert a.has_colors
    again = decode_group(res.data)
    assert all(a == b for a, b in zip(dec.frames, again.frames))
    assert bits_per_point(res.data, sum(len(f) for f in group.frames)) == \
        8 * len(res.data) / sum(len(f) for f in group.frames)


def test_geometry_only_has_no_attribute_sections():
    res = encode_static(_frames(1)[0], GEO, cube_bits=2, threshold_steps=20)
    stream = disassemble(res.data)
    assert not stream.header.has_attributes
    assert {s.kind for s in stream.sections} == {1, 2}
    assert not decode_group(res.data).frames[0].has_colors


def test_encoding_is_deterministic():
    group = FrameGroup(_frames(2))
    mode = DynamicMode("intra")
    a = encode_group(group, mode, GEO, cube_bits=2, threshold_steps=15)
    b = encode_group(group, mode, GEO, cube_bits=2, threshold_steps=15)
    assert a.data == b.data


def test_first_frame_changes_seed_stream():
    group = FrameGroup(_frames(1))
    a = encode_group(group, DynamicMode("intra"), GEO, cube_bits=2,
                     threshold_steps=10)
    b = encode_group(group, DynamicMode("intra"), GEO, cube_bits=2,
                     threshold_steps=10, first_frame=5)
    assert a.data != b.data


def test_residual_accumulation_matches_encoder():
    frames = _frames(8)
    res = encode_group(FrameGroup(frames), DynamicMode("residual"), GEO,
                       cube_bits=2, threshold_steps=15)
    stream = disassemble(res.data)
    acc = np.zeros(GARCH.num_params, dtype=np.int64)
    for t, log in enumerate(res.logs):
        acc = acc + decode_indices(stream.find(SECTION_GEOMETRY, t),
                                   GARCH.num_params)
        assert np.array_equal(acc, log.geometry_indices)


def test_residual_duplicate_frames_shrink_payload():
    cloud = _frames(1)[0]
    res = encode_group(FrameGroup([cloud, cloud]), DynamicMode("residual"),
                       dataclasses.replace(GEO, lam=20.0), cube_bits=2,
                       threshold_steps=10)
    stream = disassemble(res.data)
    first = stream.find(SECTION_GEOMETRY, 0)
    second = stream.find(SECTION_GEOMETRY, 1)
    assert len(second) < len(first)


def test_four_d_single_frame_equals_intra():
    group = FrameGroup(_frames(1, colored=True))
    four = encode_group(group, DynamicMode("fourD"), GEO, ATTR, cube_bits=2,
                        threshold_steps=15)
    intra = encode_group(group, DynamicMode("intra"), GEO, ATTR, cube_bits=2,
                         threshold_steps=15)
    assert decode_group(four.data).frames[0] == decode_group(
        intra.data).frames[0]


def test_curve_needs_two_frames():
    with pytest.raises(ValueError):
        encode_group(FrameGroup(_frames(1)), DynamicMode(
            "curve", bezier=BezierConfig(2)), GEO, cube_bits=2)


def test_attributes_need_colors():
    with pytest.raises(ValueError):
        encode_group(FrameGroup(_frames(1)), DynamicMode("intra"), GEO, ATTR,
                     cube_bits=2)
