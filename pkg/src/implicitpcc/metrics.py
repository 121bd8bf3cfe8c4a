"""Geometry and color distortion metrics and rate accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import VoxelizedCloud
from .spatial import VoxelTree

# Returned for zero distortion; never produced by dividing by zero.
INFINITE_PSNR = math.inf

NORMAL_NEIGHBORS = 9

# BT.709 full-range RGB -> Y, Cb, Cr (offsets dropped, they cancel in MSE)
BT709 = np.array([
    [0.2126, 0.7152, 0.0722],
    [-0.2126 / 1.8556, -0.7152 / 1.8556, (1 - 0.0722) / 1.8556],
    [(1 - 0.2126) / 1.5748, -0.7152 / 1.5748, -0.0722 / 1.5748],
])


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, VoxelizedCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.int64).reshape(-1, 3)


def psnr(error: float, peak_sq: float) -> float:
    if error < 0:
        raise ValueError("negative error")
    if error == 0:
        return INFINITE_PSNR
    return 10.0 * math.log10(peak_sq / error)


def geometry_peak(resolution_bits: int) -> float:
    return 3.0 * ((1 << resolution_bits) - 1) ** 2


def p2point_error(test, reference) -> float:
    """Mean over test points of the squared distance to the nearest
    reference point."""
    b, a = _points(test), _points(reference)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    d = VoxelTree(a).sq_distances(b)
    return float(d.sum()) / len(b)


def d1_psnr(test, reference, resolution_bits: int) -> float:
    e = max(p2point_error(test, reference), p2point_error(reference, test))
    return psnr(e, geometry_peak(resolution_bits))


def estimate_normals(points: np.ndarray, k: int = NORMAL_NEIGHBORS):
    """Unoriented unit normals from PCA of each point and its k neighbors.

    Returns ``(normals, degenerate)``; a neighborhood whose covariance has
    rank < 2 has no defined plane and is flagged degenerate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    normals = np.zeros((n, 3))
    if n < 3:
        return normals, np.ones(n, dtype=bool)
    kk = min(k + 1, n)
    _, idx = cKDTree(pts).query(pts, k=kk)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / kk
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    scale = np.maximum(w[:, 2], 1e-300)
    degenerate = w[:, 1] <= 1e-10 * scale
    return normals, degenerate


def _p2plane(test_pts, ref_pts, ref_normals, ref_degenerate):
    tree = VoxelTree(ref_pts)
    idx, d2 = tree.nearest(test_pts)
    diff = (test_pts - ref_pts[idx]).astype(np.float64)
    proj = np.einsum("ij,ij->i", diff, ref_normals[idx]) ** 2
    bad = ref_degenerate[idx]
    err = np.where(bad, d2.astype(np.float64), proj)
    # projection onto a unit normal never exceeds the full distance
    err = np.minimum(err, d2)
    return float(err.mean()), int(bad.sum())


def d2_error(test, reference) -> tuple:
    """Symmetric point-to-plane error and the number of fallback points."""
    b, a = _points(test), _points(reference)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    na, da = estimate_normals(a)
    nb, db = estimate_normals(b)
    e1, f1 = _p2plane(b, a, na, da)
    e2, f2 = _p2plane(a, b, nb, db)
    return max(e1, e2), f1 + f2


def d2_psnr(test, reference, resolution_bits: int) -> float:
    e, _ = d2_error(test, reference)
    return psnr(e, geometry_peak(resolution_bits))


def rgb_to_yuv(colors: np.ndarray) -> np.ndarray:
    return np.asarray(colors, dtype=np.float64) @ BT709.T


def _color_mse(test: VoxelizedCloud, reference: VoxelizedCloud) -> np.ndarray:
    idx, _ = VoxelTree(reference.points).nearest(test.points)
    diff = rgb_to_yuv(test.colors) - rgb_to_yuv(reference.colors[idx])
    return (diff ** 2).mean(axis=0)


def color_mse(test: VoxelizedCloud, reference: VoxelizedCloud) -> np.ndarray:
    """Per-channel (Y, U, V) MSE, worse of the two pairing directions."""
    if not (test.has_colors and reference.has_colors):
        raise ValueError("both clouds need colors")
    if len(test) == 0 or len(reference) == 0:
        raise ValueError("point sets must be nonempty")
    return np.maximum(_color_mse(test, reference),
                      _color_mse(reference, test))


def yuv_psnr(test: VoxelizedCloud, reference: VoxelizedCloud) -> tuple:
    """``(Y PSNR, YUV 6:1:1 PSNR)`` with peak 255."""
    mse = color_mse(test, reference)
    peak = 255.0 ** 2
    combined = (6 * mse[0] + mse[1] + mse[2]) / 8
    return psnr(float(mse[0]), peak), psnr(float(combined), peak)


def channel_psnrs(test: VoxelizedCloud, reference: VoxelizedCloud) -> tuple:
    return tuple(psnr(float(m), 255.0 ** 2) for m in color_mse(test, reference))


def bits_per_point(stream, original_point_count: int) -> float:
    """Total stream bits (``len(stream) * 8``) per original point.

    ``stream`` is the byte string or its length in bytes.
    """
    if original_point_count <= 0:
        raise ValueError("original point count must be positive")
    nbytes = stream if isinstance(stream, int) else len(stream)
    return nbytes * 8 / original_point_count


@dataclass
class MetricsReport:
    d1_psnr: float
    d2_psnr: Optional[float] = None
    y_psnr: Optional[float] = None
    yuv_psnr: Optional[float] = None
    bpp: Optional[float] = None
    points: int = 0
    reconstructed_points: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(reconstructed: VoxelizedCloud, original: VoxelizedCloud,
             with_d2: bool = True) -> MetricsReport:
    """All applicable metrics for one frame (bpp left unset)."""
    n = original.resolution_bits
    report = MetricsReport(
        d1_psnr=d1_psnr(reconstructed, original, n),
        points=len(original), reconstructed_points=len(reconstructed))
    if with_d2:
        report.d2_psnr = d2_psnr(reconstructed, original, n)
    if reconstructed.has_colors and original.has_colors:
        report.y_psnr, report.yuv_psnr = yuv_psnr(reconstructed, original)
    return report


def average_reports(reports: list, total_bits: Optional[int] = None
                    ) -> MetricsReport:
    """Mean of per-frame PSNRs; bpp = total bits / total original points."""
    def mean(name):
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    agg = MetricsReport(
        d1_psnr=mean("d1_psnr"), d2_psnr=mean("d2_psnr"),
        y_psnr=mean("y_psnr"), yuv_psnr=mean("yuv_psnr"),
        points=sum(r.points for r in reports),
        reconstructed_points=sum(r.reconstructed_points for r in reports))
    if total_bits is not None:
        agg.bpp = total_bits / agg.points
    return agg
