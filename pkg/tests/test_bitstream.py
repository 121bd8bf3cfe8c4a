import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicitpcc.bitstream import (BadMagicError, BitstreamExhaustedError,
                                   CodedStream, ContainerError,
                                   LengthOverrunError, ModelDesyncError,
                                   Section, StreamHeader, VersionMismatchError,
                                   assemble, code_to_tau, decode_cube_map,
                                   decode_indices, disassemble,
                                   encode_cube_map, encode_indices,
                                   header_bytes, morton_order, tau_to_code)
from implicitpcc.bitstream.arith import RangeDecoder, RangeEncoder
from implicitpcc.bitstream.container import section_table_size
from implicitpcc.nn.network import NetworkArch

INT32_MAX = 2 ** 31 - 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-INT32_MAX, INT32_MAX), max_size=80))
def test_index_roundtrip(values):
    data = encode_indices(values)
    np.testing.assert_array_equal(decode_indices(data, len(values)), values)


def test_extremes_and_small_values():
    values = [INT32_MAX, -INT32_MAX, 0, 0, 1, -1, 2, -2, 65535, -65536,
              INT32_MAX, 0]
    np.testing.assert_array_equal(
        decode_indices(encode_indices(values), len(values)), values)


def test_empty_sequence():
    data = encode_indices([])
    assert decode_indices(data, 0).shape == (0,)


def test_all_zero_payload_small():
    data = encode_indices(np.zeros(10 ** 6, dtype=np.int64))
    assert len(data) < 2048
    assert not decode_indices(data, 10 ** 6).any()


def test_sparse_beats_dense():
    rng = np.random.default_rng(0)
    dense = rng.integers(-30, 31, 5000)
    sparse = np.where(rng.random(5000) < 0.1, dense, 0)
    assert len(encode_indices(sparse)) < len(encode_indices(dense))


def test_truncation_raises_exhaustion():
    rng = np.random.default_rng(1)
    values = rng.integers(-1000, 1000, 400)
    data = encode_indices(values)
    for cut in (1, 5, len(data) // 2):
        with pytest.raises(BitstreamExhaustedError):
            decode_indices(data[:-cut], len(values))


def test_wrong_count_detected():
    data = encode_indices(np.arange(1, 200))
    with pytest.raises((ModelDesyncError, BitstreamExhaustedError)):
        decode_indices(data, 150)


def test_corruption_mostly_detected():
    # the sentinel catches a desynced model with probability 255/256; flips
    # in the final flush bytes only touch low bits that are never read
    rng = np.random.default_rng(2)
    values = rng.integers(-50, 50, 300)
    data = encode_indices(values)
    caught = 0
    body = len(data) - 5
    for i in range(body):
        bad = bytearray(data)
        bad[i] ^= 0x40
        try:
            out = decode_indices(bytes(bad), len(values))
        except (ModelDesyncError, BitstreamExhaustedError):
            caught += 1
            continue
        assert out.shape == values.shape
    assert caught >= 0.95 * body


def test_bypass_and_modelled_bits_mix():
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2, 2000).tolist()
    kinds = rng.integers(0, 2, 2000).tolist()
    enc = RangeEncoder()
    probs = [2048] * 2
    for b, k in zip(bits, kinds):
        if k:
            enc.encode(probs, b, b)
        else:
            enc.encode_bypass(b)
    data = enc.finish()
    dec = RangeDecoder(data)
    probs = [2048] * 2
    out = []
    for b, k in zip(bits, kinds):
        # context equals the bit itself, so decoding peeks with ctx=b
        out.append(dec.decode(probs, b) if k else dec.decode_bypass())
    dec.check_sentinel()
    assert out == bits


def test_morton_order_is_a_permutation():
    xyz = morton_order(2)
    assert len(np.unique(xyz, axis=0)) == 64
    np.testing.assert_array_equal(xyz[:8], [
        [0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
        [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]])


def test_empty_cube_map_small():
    data = encode_cube_map(np.empty((0, 3)), 5)
    assert len(data) < 64
    assert decode_cube_map(data, 5).shape == (0, 3)


def test_clustered_cube_map_compact():
    rng = np.random.default_rng(4)
    g = np.stack(np.meshgrid(*[np.arange(32)] * 3, indexing="ij"), -1)
    g = g.reshape(-1, 3)
    r = np.linalg.norm(g - 15.5, axis=1)
    cubes = g[np.abs(r - 6) < 0.5]
    assert 300 < len(cubes) < 700
    data = encode_cube_map(cubes, 5)
    assert len(data) < 4096 // 4
    back = decode_cube_map(data, 5)
    np.testing.assert_array_equal(back, cubes)
    del rng


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_cube_map_roundtrip(bits, seed, density):
    rng = np.random.default_rng(seed)
    side = 1 << bits
    occ = rng.random((side,) * 3) < density
    cubes = np.argwhere(occ)
    np.testing.assert_array_equal(
        decode_cube_map(encode_cube_map(cubes, bits), bits), cubes)


def test_tau_codes():
    assert tau_to_code(0.5) == 32768
    assert tau_to_code(0.0) == 1
    assert tau_to_code(1.0) == 65535
    assert code_to_tau(16384) == 0.25


ARCH = NetworkArch(levels_spatial=3, residual_blocks=1, hidden_width=16,
                   block_width=8)


def _stream(colored=True):
    header = StreamHeader(
        mode="curve", resolution_bits=7, cube_bits=3, group_size=3,
        geometry_arch=ARCH, geometry_step=1 / 1024,
        threshold_codes=(100, 200, 65535), control_points=2,
        attribute_arch=NetworkArch(output_dim=3, activation="sine",
                                   omega0=30.0) if colored else None,
        attribute_step=1 / 4096 if colored else 0.0,
        scale=(2.0, 2.0, 2.0), offset=(-1.0, 0.5, 3.25))
    secs = [Section(1, t, 0, bytes([t] * (t + 1))) for t in range(3)]
    secs += [Section(2, 0, i, b"g" * 7) for i in range(2)]
    return CodedStream(header, secs)


@pytest.mark.parametrize("colored", [True, False])
def test_container_roundtrip(colored):
    s = _stream(colored)
    data = assemble(s)
    back = disassemble(data)
    assert back.header == s.header
    assert back.sections == s.sections
    assert assemble(back) == data
    assert len(data) == len(header_bytes(s.header)) + section_table_size(
        len(s.sections)) + sum(len(x.payload) for x in s.sections)


def test_bad_magic():
    data = bytearray(assemble(_stream()))
    data[0:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        disassemble(bytes(data))


def test_version_bump_rejected():
    data = bytearray(assemble(_stream()))
    struct.pack_into("<H", data, 4, 2)
    with pytest.raises(VersionMismatchError):
        disassemble(bytes(data))


def test_overrun_and_trailing():
    data = assemble(_stream())
    with pytest.raises(LengthOverrunError):
        disassemble(data[:-1])
    with pytest.raises(LengthOverrunError):
        disassemble(data[:30])
    with pytest.raises(ContainerError):
        disassemble(data + b"\x00")


def test_missing_section():
    with pytest.raises(ContainerError):
        _stream().find(3, 0, 0)


def test_header_validation():
    h = _stream().header
    h.threshold_codes = (1, 2)
    with pytest.raises(ValueError):
        header_bytes(h)
