"""Self-describing container holding one coded frame group.

All integers are little-endian. See ``docs/bitstream_format.md`` for the
field tables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from ..nn.network import ACTIVATIONS, NetworkArch

MAGIC = b"INPC"
VERSION = 1

MODES = ("intra", "residual", "curve", "fourD")

SECTION_CUBES = 1
SECTION_GEOMETRY = 2
SECTION_ATTRIBUTES = 3
SECTION_NAMES = {SECTION_CUBES: "cubes", SECTION_GEOMETRY: "geometry",
                 SECTION_ATTRIBUTES: "attributes"}

FLAG_ATTRIBUTES = 1

_FIXED = struct.Struct("<4sHBBBHBB")
_ARCH = struct.Struct("<BBBBHHBBdB")
_STEPS = struct.Struct("<dd")
_TRANSFORM = struct.Struct("<6d")
_SECTION = struct.Struct("<BHHI")
TAU_SCALE = 1 << 16


class ContainerError(ValueError):
    """Malformed container bytes."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class LengthOverrunError(ContainerError):
    pass


def tau_to_code(tau: float) -> int:
    """16-bit fixed point, kept strictly inside (0, 1)."""
    code = int(tau * TAU_SCALE + 0.5)
    return min(max(code, 1), TAU_SCALE - 1)


def code_to_tau(code: int) -> float:
    return code / TAU_SCALE


@dataclass(frozen=True)
class Section:
    kind: int
    frame: int
    index: int
    payload: bytes

    @property
    def name(self) -> str:
        return SECTION_NAMES.get(self.kind, f"type{self.kind}")


@dataclass
class StreamHeader:
    mode: str
    resolution_bits: int
    cube_bits: int
    group_size: int
    geometry_arch: NetworkArch
    geometry_step: float
    threshold_codes: tuple
    control_points: int = 0
    attribute_arch: Optional[NetworkArch] = None
    attribute_step: float = 0.0
    scale: tuple = (1.0, 1.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)
    version: int = VERSION

    @property
    def has_attributes(self) -> bool:
        return self.attribute_arch is not None

    @property
    def thresholds(self) -> tuple:
        return tuple(code_to_tau(c) for c in self.threshold_codes)


@dataclass
class CodedStream:
    header: StreamHeader
    sections: list = field(default_factory=list)

    def find(self, kind: int, frame: int = 0, index: int = 0) -> bytes:
        for s in self.sections:
            if (s.kind, s.frame, s.index) == (kind, frame, index):
                return s.payload
        raise ContainerError(
            f"missing {SECTION_NAMES.get(kind, kind)} section "
            f"(frame {frame}, index {index})")


def _pack_arch(a: NetworkArch) -> bytes:
    return _ARCH.pack(a.input_dim, a.levels_spatial, a.levels_temporal,
                      a.residual_blocks, a.hidden_width, a.block_width,
                      a.output_dim, ACTIVATIONS.index(a.activation),
                      a.omega0, int(a.layer_norm))


def _unpack_arch(buf, pos):
    vals = _read(_ARCH, buf, pos)
    (ind, ls, lt, blocks, hw, bw, outd, act, omega0, ln) = vals
    if act >= len(ACTIVATIONS):
        raise ContainerError(f"unknown activation code {act}")
    try:
        arch = NetworkArch(input_dim=ind, levels_spatial=ls,
                           levels_temporal=lt, residual_blocks=blocks,
                           hidden_width=hw, block_width=bw, output_dim=outd,
                           activation=ACTIVATIONS[act], omega0=omega0,
                           layer_norm=bool(ln))
    except ValueError as exc:
        raise ContainerError(f"invalid architecture descriptor: {exc}")
    return arch, pos + _ARCH.size


def _read(st: struct.Struct, buf: bytes, pos: int):
    if pos + st.size > len(buf):
        raise LengthOverrunError(
            f"header field at byte {pos} runs past end of stream")
    return st.unpack_from(buf, pos)


def header_bytes(h: StreamHeader) -> bytes:
    if h.mode not in MODES:
        raise ValueError(f"unknown mode {h.mode!r}")
    if len(h.threshold_codes) != h.group_size:
        raise ValueError("one threshold per frame required")
    flags = FLAG_ATTRIBUTES if h.has_attributes else 0
    out = [_FIXED.pack(MAGIC, h.version, MODES.index(h.mode),
                       h.resolution_bits, h.cube_bits, h.group_size,
                       h.control_points, flags),
           _pack_arch(h.geometry_arch)]
    if h.has_attributes:
        out.append(_pack_arch(h.attribute_arch))
    out.append(_STEPS.pack(h.geometry_step, h.attribute_step))
    out.append(_TRANSFORM.pack(*h.scale, *h.offset))
    out.append(struct.pack(f"<{h.group_size}H", *h.threshold_codes))
    return b"".join(out)


def assemble(stream: CodedStream) -> bytes:
    """Serialize header, section table and payloads."""
    parts = [header_bytes(stream.header),
             struct.pack("<I", len(stream.sections))]
    for s in stream.sections:
        parts.append(_SECTION.pack(s.kind, s.frame, s.index, len(s.payload)))
    parts.extend(s.payload for s in stream.sections)
    return b"".join(parts)


def disassemble(data: bytes) -> CodedStream:
    """Parse container bytes; raises a :class:`ContainerError` subclass."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (_, version, mode, n, m, t, p, flags) = _read(_FIXED, data, 0)
    if version != VERSION:
        raise VersionMismatchError(
            f"stream version {version} is not supported (expected {VERSION})")
    if mode >= len(MODES):
        raise ContainerError(f"unknown mode code {mode}")
    pos = _FIXED.size
    geom_arch, pos = _unpack_arch(data, pos)
    attr_arch = None
    if flags & FLAG_ATTRIBUTES:
        attr_arch, pos = _unpack_arch(data, pos)
    gstep, astep = _read(_STEPS, data, pos)
    pos += _STEPS.size
    tr = _read(_TRANSFORM, data, pos)
    pos += _TRANSFORM.size
    taus = _read(struct.Struct(f"<{t}H"), data, pos)
    pos += 2 * t
    (count,) = _read(struct.Struct("<I"), data, pos)
    pos += 4
    entries = []
    for _ in range(count):
        entries.append(_read(_SECTION, data, pos))
        pos += _SECTION.size
    sections = []
    for kind, frame, index, length in entries:
        if pos + length > len(data):
            raise LengthOverrunError(
                f"section of {length} bytes at offset {pos} overruns the "
                f"{len(data)}-byte stream")
        sections.append(Section(kind, frame, index, data[pos:pos + length]))
        pos += length
    if pos != len(data):
        raise ContainerError(f"{len(data) - pos} trailing bytes after sections")
    header = StreamHeader(
        mode=MODES[mode], resolution_bits=n, cube_bits=m, group_size=t,
        geometry_arch=geom_arch, geometry_step=gstep,
        threshold_codes=tuple(taus), control_points=p,
        attribute_arch=attr_arch, attribute_step=astep,
        scale=tuple(tr[:3]), offset=tuple(tr[3:]), version=version)
    return CodedStream(header, sections)


def section_table_size(count: int) -> int:
    return 4 + count * _SECTION.size
