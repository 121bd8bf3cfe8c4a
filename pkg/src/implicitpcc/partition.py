"""Cube partition of the voxel grid and access to the candidate voxel set.

The grid of ``2**N`` voxels per axis is split into ``2**M`` cubes per axis.
Only cubes holding at least one occupied voxel are kept; the voxels inside
them form the candidate set that the occupancy network is evaluated on.
Candidates are never materialized as a whole: they are sampled or iterated
cube by cube.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .pointcloud import VoxelizedCloud


@dataclass(frozen=True)
class GridParams:
    resolution_bits: int
    cube_bits: int

    def __post_init__(self):
        if self.resolution_bits < 1:
            raise ValueError("resolution_bits must be >= 1")
        if not 0 <= self.cube_bits <= self.resolution_bits:
            raise ValueError(
                f"cube_bits must lie in [0, {self.resolution_bits}], "
                f"got {self.cube_bits}")

    @property
    def cube_edge(self) -> int:
        """Voxels per cube edge, ``2**(N-M)``."""
        return 1 << (self.resolution_bits - self.cube_bits)

    @property
    def cubes_per_axis(self) -> int:
        return 1 << self.cube_bits


@dataclass(frozen=True, eq=False)
class CubeSet:
    """Sorted, duplicate-free set of non-empty cube coordinates."""

    grid: GridParams
    cubes: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cubes, dtype=np.int64).reshape(-1, 3)
        if len(c):
            if c.min() < 0 or c.max() >= self.grid.cubes_per_axis:
                raise ValueError("cube coordinate out of range")
            keys = _cube_keys(c, self.grid.cube_bits)
            keys, first = np.unique(keys, return_index=True)
            c = c[first]
        else:
            keys = np.empty(0, dtype=np.int64)
        c.setflags(write=False)
        keys.setflags(write=False)
        object.__setattr__(self, "cubes", c)
        object.__setattr__(self, "_keys", keys)

    def __len__(self):
        return len(self.cubes)

    def __eq__(self, other):
        if not isinstance(other, CubeSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.cubes,
                                                          other.cubes)

    __hash__ = None

    @property
    def cube_keys(self) -> np.ndarray:
        return self._keys


def _cube_keys(cubes: np.ndarray, cube_bits: int) -> np.ndarray:
    m = cube_bits
    return (cubes[:, 0] << (2 * m)) | (cubes[:, 1] << m) | cubes[:, 2]


def build_cube_set(cloud: VoxelizedCloud, cube_bits: int) -> CubeSet:
    grid = GridParams(cloud.resolution_bits, cube_bits)
    shift = cloud.resolution_bits - cube_bits
    return CubeSet(grid, cloud.points >> shift)


def candidate_count(cube_set: CubeSet) -> int:
    """Exact number of candidate voxels, ``edge**3 * |W|``."""
    return cube_set.grid.cube_edge ** 3 * len(cube_set)


def contains(cube_set: CubeSet, voxel) -> bool:
    return bool(contains_many(cube_set, np.asarray(voxel).reshape(1, 3))[0])


def contains_many(cube_set: CubeSet, voxels: np.ndarray) -> np.ndarray:
    """Vectorized membership test against the candidate set."""
    v = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    shift = cube_set.grid.resolution_bits - cube_set.grid.cube_bits
    keys = _cube_keys(v >> shift, cube_set.grid.cube_bits)
    table = cube_set.cube_keys
    if len(table) == 0:
        return np.zeros(len(v), dtype=bool)
    pos = np.searchsorted(table, keys)
    pos[pos == len(table)] = 0
    return table[pos] == keys


def sample_candidates(cube_set: CubeSet, rng: np.random.Generator,
                      size: int) -> np.ndarray:
    """Draw ``size`` voxels uniformly from the candidate set.

    A cube is drawn uniformly, then a local offset inside it; every cube
    has the same voxel count so the result is uniform over all candidates.
    """
    if len(cube_set) == 0:
        raise ValueError("cannot sample from an empty cube set")
    edge = cube_set.grid.cube_edge
    which = rng.integers(0, len(cube_set), size=size)
    local = rng.integers(0, edge, size=(size, 3))
    return local + edge * cube_set.cubes[which]


def sample_candidate(cube_set: CubeSet, rng: np.random.Generator):
    return tuple(int(v) for v in sample_candidates(cube_set, rng, 1)[0])


def local_offsets(edge: int) -> np.ndarray:
    """All offsets inside a cube in lexicographic order, shape (edge**3, 3)."""
    r = np.arange(edge, dtype=np.int64)
    g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def iterate_candidate_blocks(cube_set: CubeSet, cubes_per_block: int = 64
                             ) -> Iterator[np.ndarray]:
    """Yield candidate voxels as arrays, cube-major then local lexicographic.

    Memory stays bounded by ``cubes_per_block * edge**3`` rows.
    """
    edge = cube_set.grid.cube_edge
    offsets = local_offsets(edge)
    for start in range(0, len(cube_set), cubes_per_block):
        cubes = cube_set.cubes[start:start + cubes_per_block]
        block = (edge * cubes)[:, None, :] + offsets[None, :, :]
        yield block.reshape(-1, 3)


def iterate_candidates(cube_set: CubeSet) -> Iterator[tuple]:
    """Yield every candidate voxel once as an ``(x, y, z)`` tuple."""
    for block in iterate_candidate_blocks(cube_set, 1):
        for row in block:
            yield tuple(int(v) for v in row)


def candidate_array(cube_set: CubeSet) -> np.ndarray:
    """All candidates in iteration order; only for small sets."""
    blocks = list(iterate_candidate_blocks(cube_set))
    if not blocks:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(blocks)
