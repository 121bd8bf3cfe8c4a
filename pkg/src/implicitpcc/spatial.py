"""Exact nearest-neighbor queries on integer voxel sets."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

LEAF_SIZE = 16


class VoxelTree:
    """k-d tree over integer points with deterministic tie-breaking.

    Squared distances between integer points are integers, so they are
    recomputed exactly in int64 after the float tree query. When several
    reference points share the minimal distance, the lexicographically
    smallest one wins.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        # lexicographic order makes "smallest index" == "smallest coordinate"
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
        self.points = pts[order]
        self.order = order
        self.tree = cKDTree(self.points.astype(np.float64),
                            leafsize=LEAF_SIZE)

    def __len__(self):
        return len(self.points)

    def sq_distances(self, queries: np.ndarray) -> np.ndarray:
        """Exact squared distance from each query to its nearest point."""
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        if len(q) == 0:
            return np.empty(0, dtype=np.int64)
        _, idx = self.tree.query(q.astype(np.float64), k=1)
        d = self.points[idx] - q
        return np.einsum("ij,ij->i", d, d)

    def nearest(self, queries: np.ndarray) -> tuple:
        """``(index, sq_distance)`` per query; ``index`` refers to the
        points as passed to the constructor.
        """
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        if len(q) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        k = min(8, len(self.points))
        _, idx = self.tree.query(q.astype(np.float64), k=k)
        idx = idx.reshape(len(q), k)
        diff = self.points[idx] - q[:, None, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best_d = d2.min(axis=1)
        # smallest sorted index among the exact minima
        cand = np.where(d2 == best_d[:, None], idx, np.iinfo(np.int64).max)
        best = cand.min(axis=1)
        # with k hits all tied the k+1-th may tie too; resolve with a ball query
        if k < len(self.points):
            full = np.nonzero((d2 == best_d[:, None]).all(axis=1))[0]
            for i in full:
                r = np.sqrt(float(best_d[i])) + 1e-6
                hits = np.asarray(self.tree.query_ball_point(
                    q[i].astype(np.float64), r), dtype=np.int64)
                dd = self.points[hits] - q[i]
                dd = np.einsum("ij,ij->i", dd, dd)
                best[i] = hits[dd == best_d[i]].min()
        return self.order[best], best_d
