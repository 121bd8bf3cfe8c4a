"""Point cloud containers, PLY input/output and voxelization."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np


class PlyError(ValueError):
    """Base class for PLY parsing failures."""


class PlyHeaderError(PlyError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PlyPropertyTypeError(PlyError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PlyTruncatedError(PlyError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class DegenerateCloudError(ValueError):
    """Raised when a cloud cannot be normalized (zero extent)."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True, eq=False)
class RawCloud:
    """Real-valued positions with optional 8-bit RGB colors."""

    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors).reshape(-1, 3)
            if len(col) != len(pos):
                raise ValueError(
                    f"{len(col)} colors for {len(pos)} positions")
            object.__setattr__(self, "colors", col.astype(np.uint8))

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class VoxelizedCloud:
    """Set of integer voxels on a ``2**resolution_bits`` grid.

    Points are kept unique and sorted lexicographically, so two clouds
    holding the same set compare equal regardless of construction order.
    ``colors`` (uint8, one row per point) is optional.
    """

    resolution_bits: int
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.resolution_bits < 1:
            raise ValueError("resolution_bits must be >= 1")
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        col = None
        if self.colors is not None:
            col = np.asarray(self.colors).reshape(-1, 3).astype(np.uint8)
            if len(col) != len(pts):
                raise ValueError(f"{len(col)} colors for {len(pts)} points")
        if len(pts):
            hi = 1 << self.resolution_bits
            if pts.min() < 0 or pts.max() >= hi:
                raise ValueError(
                    f"coordinates outside [0, {hi}) for N={self.resolution_bits}")
            order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
            pts = pts[order]
            if col is not None:
                col = col[order]
            if len(pts) > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=1)):
                raise ValueError("duplicate voxel coordinates")
        pts.setflags(write=False)
        if col is not None:
            col.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", col)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, VoxelizedCloud):
            return NotImplemented
        if self.resolution_bits != other.resolution_bits:
            return False
        if not np.array_equal(self.points, other.points):
            return False
        if (self.colors is None) != (other.colors is None):
            return False
        return self.colors is None or np.array_equal(self.colors, other.colors)

    __hash__ = None

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    def keys(self) -> np.ndarray:
        """Sorted int64 keys, one per point (see :func:`voxel_keys`)."""
        return voxel_keys(self.points, self.resolution_bits)

    def geometry(self) -> "VoxelizedCloud":
        """Copy without colors."""
        return VoxelizedCloud(self.resolution_bits, self.points)


def voxel_keys(points: np.ndarray, resolution_bits: int) -> np.ndarray:
    """Pack integer coordinates into int64 keys preserving lexicographic order."""
    p = np.asarray(points, dtype=np.int64).reshape(-1, 3)
    n = resolution_bits
    return (p[:, 0] << (2 * n)) | (p[:, 1] << n) | p[:, 2]


@dataclass(frozen=True)
class VoxelTransform:
    """Affine map from voxel coordinates back to the input units.

    ``position = voxel / scale + offset`` per axis.
    """

    scale: tuple = (1.0, 1.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) / np.asarray(self.scale)
                + np.asarray(self.offset))

    def apply(self, positions: np.ndarray, resolution_bits: int) -> np.ndarray:
        """Input units to voxel coordinates, rounded half-up and clipped."""
        v = (np.asarray(positions, dtype=np.float64) - np.asarray(self.offset)
             ) * np.asarray(self.scale)
        q = np.floor(v + 0.5).astype(np.int64)
        return np.clip(q, 0, (1 << resolution_bits) - 1)

    @property
    def is_identity(self) -> bool:
        return self.scale == (1.0, 1.0, 1.0) and self.offset == (0.0, 0.0, 0.0)


def voxelize(cloud: RawCloud, resolution_bits: int):
    """Quantize a raw cloud to an N-bit integer grid.

    Inputs whose coordinates are already integers inside ``[0, 2**N)`` are
    passed through with an identity transform. Anything else is min-max
    normalized with one uniform scale taken from the longest bounding-box
    axis and rounded half-up. Voxels hit by several points are merged and
    take the channel-wise mean color, rounded half-up.

    Returns:
        ``(VoxelizedCloud, VoxelTransform)``
    """
    if resolution_bits < 1:
        raise ValueError("resolution_bits must be >= 1")
    pos = cloud.positions
    if len(pos) == 0:
        raise ValueError("cannot voxelize an empty cloud")
    top = (1 << resolution_bits) - 1
    aligned = (np.all(pos == np.round(pos)) and pos.min() >= 0
               and pos.max() <= top)
    if aligned:
        q = pos.astype(np.int64)
        transform = VoxelTransform()
    else:
        lo = pos.min(axis=0)
        extent = float((pos.max(axis=0) - lo).max())
        if extent == 0.0:
            raise DegenerateCloudError("all points are identical")
        scale = top / extent
        q = np.floor((pos - lo) * scale + 0.5).astype(np.int64)
        np.clip(q, 0, top, out=q)
        transform = VoxelTransform((scale,) * 3, tuple(float(v) for v in lo))
    return _merge(q, cloud.colors, resolution_bits), transform


def voxelize_with(cloud: RawCloud, resolution_bits: int,
                  transform: VoxelTransform) -> VoxelizedCloud:
    """Voxelize with a known transform, e.g. one taken from an original."""
    q = transform.apply(cloud.positions, resolution_bits)
    return _merge(q, cloud.colors, resolution_bits)


def voxelize_sequence(clouds, resolution_bits: int):
    """Voxelize frames with one shared transform (from their union).

    Returns ``(list of VoxelizedCloud, VoxelTransform)``.
    """
    clouds = list(clouds)
    if not clouds:
        raise ValueError("no frames given")
    union = RawCloud(np.concatenate([c.positions for c in clouds]))
    _, transform = voxelize(union, resolution_bits)
    return [voxelize_with(c, resolution_bits, transform)
            for c in clouds], transform


def _merge(q, colors_in, resolution_bits):
    keys = voxel_keys(q, resolution_bits)
    uniq, first, inverse = np.unique(keys, return_index=True,
                                     return_inverse=True)
    points = q[first]
    colors = None
    if colors_in is not None:
        counts = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
        sums = np.zeros((len(uniq), 3), dtype=np.int64)
        np.add.at(sums, inverse, colors_in.astype(np.int64))
        # round-half-up of sums / counts in exact integer arithmetic
        colors = ((2 * sums + counts[:, None]) // (2 * counts[:, None]))
        colors = colors.astype(np.uint8)
    return VoxelizedCloud(resolution_bits, points, colors)


# --------------------------------------------------------------------------
# PLY

_HEADER_END = re.compile(rb"end_header[ \t]*\r?\n")


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyHeaderError("missing 'ply' magic", 1)
    match = _HEADER_END.search(data)
    if match is None:
        raise PlyHeaderError("missing end_header", 1)
    lines = data[:match.start()].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # [name, count, [(prop, dtype), ...], first_line]
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed format line {raw!r}", lineno)
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyHeaderError(f"unsupported format {tokens[1]!r}",
                                     lineno)
            fmt = tokens[1]
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyHeaderError(f"malformed element line {raw!r}", lineno)
            elements.append([tokens[1], int(tokens[2]), [], lineno])
        elif key == "property":
            if not elements:
                raise PlyHeaderError("property before any element", lineno)
            if len(tokens) >= 2 and tokens[1] == "list":
                if elements[-1][0] == "vertex":
                    raise PlyPropertyTypeError(
                        "list properties on vertices are not supported", lineno)
                if len(tokens) != 5:
                    raise PlyHeaderError(f"malformed list property {raw!r}",
                                         lineno)
                for t in tokens[2:4]:
                    if t not in _PLY_TYPES:
                        raise PlyPropertyTypeError(f"unknown type {t!r}",
                                                   lineno)
                elements[-1][2].append((tokens[4], ("list",) + tuple(
                    _PLY_TYPES[t] for t in tokens[2:4])))
                continue
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed property line {raw!r}", lineno)
            if tokens[1] not in _PLY_TYPES:
                raise PlyPropertyTypeError(f"unknown type {tokens[1]!r}",
                                           lineno)
            elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise PlyHeaderError(f"unexpected header keyword {key!r}", lineno)
    if fmt is None:
        raise PlyHeaderError("missing format line", len(lines))
    return fmt, elements, match.end(), len(lines)


def parse_ply(data: bytes) -> RawCloud:
    """Read vertex positions (and RGB if present) from PLY bytes.

    Supports ``ascii`` and ``binary_little_endian``. Extra vertex
    properties are ignored; elements after the vertex element are skipped.
    """
    fmt, elements, body_start, n_header = _parse_header(data)
    vertex_at = [i for i, e in enumerate(elements) if e[0] == "vertex"]
    if not vertex_at:
        raise PlyHeaderError("no vertex element", n_header)
    vi = vertex_at[0]
    _, count, props, line = elements[vi]
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise PlyHeaderError(f"vertex element lacks property {axis!r}",
                                 line)
    has_color = all(c in names for c in ("red", "green", "blue"))

    if fmt == "ascii":
        table = _read_ascii(data, body_start, n_header, elements[:vi], count,
                            props)
    else:
        table = _read_binary(data, body_start, elements[:vi], count, props)
    positions = np.stack([table[a].astype(np.float64) for a in "xyz"], axis=1)
    colors = None
    if has_color:
        colors = np.stack([table[c] for c in ("red", "green", "blue")], axis=1)
        colors = np.clip(colors, 0, 255).astype(np.uint8)
    return RawCloud(positions, colors)


def _read_ascii(data, start, n_header, before, count, props):
    text = data[start:].decode("ascii", errors="replace").splitlines()
    row = 0
    for name, n, eprops, _ in before:
        row += n
    rows = text[row:row + count]
    if len(rows) < count:
        raise PlyTruncatedError(
            f"expected {count} vertex lines, found {len(rows)}",
            n_header + 1 + row + len(rows))
    width = len(props)
    values = np.empty((count, width), dtype=np.float64)
    for i, line in enumerate(rows):
        tokens = line.split()
        if len(tokens) < width:
            raise PlyTruncatedError(
                f"vertex line has {len(tokens)} values, expected {width}",
                n_header + 1 + row + i + 1)
        try:
            values[i] = [float(t) for t in tokens[:width]]
        except ValueError:
            raise PlyHeaderError(f"non-numeric vertex value in {line!r}",
                                 n_header + 1 + row + i + 1) from None
    return {name: values[:, j] for j, (name, _) in enumerate(props)}


def _read_binary(data, start, before, count, props):
    offset = start
    for name, n, eprops, line in before:
        if any(isinstance(t, tuple) for _, t in eprops):
            raise PlyPropertyTypeError(
                f"list property in element {name!r} preceding vertices", line)
        offset += n * np.dtype([(p, "<" + t) for p, t in eprops]).itemsize
    dtype = np.dtype([(p, "<" + t) for p, t in props])
    need = count * dtype.itemsize
    if len(data) - offset < need:
        raise PlyTruncatedError(
            f"vertex payload needs {need} bytes, {max(len(data) - offset, 0)} "
            "available", len(data))
    table = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return {name: table[name] for name, _ in props}


def write_ply(cloud: VoxelizedCloud, transform: Optional[VoxelTransform] = None
              ) -> bytes:
    """Serialize as binary little-endian PLY (float32 xyz, uchar rgb).

    With ``transform`` the voxel coordinates are mapped back to input units
    first; otherwise integer voxel coordinates are written.
    """
    pts = cloud.points.astype(np.float64)
    if transform is not None:
        pts = transform.inverse(pts)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(len(pts), dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        rec["red"], rec["green"], rec["blue"] = cloud.colors.T
        header += ["property uchar red", "property uchar green",
                   "property uchar blue"]
    header.append("end_header")
    return ("\n".join(header) + "\n").encode("ascii") + rec.tobytes()


def read_cloud(path, resolution_bits: int):
    """Load a PLY file and voxelize it."""
    with open(path, "rb") as fh:
        return voxelize(parse_ply(fh.read()), resolution_bits)
