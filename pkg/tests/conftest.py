import numpy as np
import pytest

from implicitpcc.pointcloud import VoxelizedCloud


def sphere_shell(resolution_bits=5, radius=4.6, center=15.5, colors=None):
    """Voxels whose centers lie within half a voxel of a sphere."""
    n = 1 << resolution_bits
    g = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1)
    g = g.reshape(-1, 3)
    r = np.linalg.norm(g - center, axis=1)
    pts = g[np.abs(r - radius) < 0.5]
    col = None
    if colors is not None:
        col = colors(pts)
    return VoxelizedCloud(resolution_bits, pts, col)


def random_cloud(rng, resolution_bits, count, colored=False):
    n = 1 << resolution_bits
    keys = rng.choice(n ** 3, size=count, replace=False)
    pts = np.stack([keys // (n * n), (keys // n) % n, keys % n], axis=1)
    col = rng.integers(0, 256, (count, 3)) if colored else None
    return VoxelizedCloud(resolution_bits, pts, col)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria append (number, passed, detail) here
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
