"""Occupancy network training, threshold fine-tuning and geometry
reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .metrics import geometry_peak, psnr
from .nn.network import (NetworkArch, NetworkParams, encode_batch,
                         init_params, normalize_coords, predict_coords)
from .partition import (CubeSet, candidate_count, iterate_candidate_blocks,
                        sample_candidates)
from .pointcloud import VoxelizedCloud, voxel_keys
from .spatial import VoxelTree
from .training import Schedule, TrainResult, make_rng, run_training

P_EPS = 1e-7
GOLDEN_LOW = (3 - math.sqrt(5)) / 2
GOLDEN_HIGH = (math.sqrt(5) - 1) / 2

GEOMETRY_ARCH = NetworkArch(residual_blocks=2, activation="relu")


class SamplingRatioError(ValueError):
    """beta is below the occupied fraction of the candidate set."""


class EmptyReconstructionError(RuntimeError):
    """No threshold yields a nonempty reconstruction."""


@dataclass(frozen=True)
class SamplingPlan:
    beta: float
    zeta: float
    beta_star: float
    alpha_star: float

    @property
    def alpha(self) -> float:
        return 1.0 - self.beta


def plan_from_ratio(beta: float, zeta: float) -> SamplingPlan:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    if beta < zeta:
        raise SamplingRatioError(
            f"beta={beta} is below the occupied fraction zeta={zeta:.6g} of "
            f"the candidate voxels; raise beta or lower the cube bits M")
    if zeta == 1.0:
        # every candidate is occupied; any mixture gives label 1
        return SamplingPlan(beta, zeta, 1.0, 0.0)
    return SamplingPlan(beta, zeta, (beta - zeta) / (1.0 - zeta),
                        (1.0 - beta) / (1.0 - zeta))


def make_sampling_plan(cloud: VoxelizedCloud, cube_set: CubeSet,
                       beta: float) -> SamplingPlan:
    """Mixture weights over U(X) and U(V) giving an occupied share of beta."""
    return plan_from_ratio(beta, len(cloud) / candidate_count(cube_set))


class _Membership:
    """Sorted voxel keys for O(log n) occupancy labels."""

    def __init__(self, cloud: VoxelizedCloud):
        self.keys = cloud.keys()
        self.bits = cloud.resolution_bits

    def __call__(self, voxels: np.ndarray) -> np.ndarray:
        if len(self.keys) == 0:
            return np.zeros(len(voxels), dtype=bool)
        k = voxel_keys(voxels, self.bits)
        pos = np.searchsorted(self.keys, k)
        pos[pos == len(self.keys)] = 0
        return self.keys[pos] == k


def sample_training_voxels(plan: SamplingPlan, cloud: VoxelizedCloud,
                           cube_set: CubeSet, rng: np.random.Generator,
                           size: int, membership=None) -> tuple:
    """Vectorized draws from ``beta* U(X) + alpha* U(V)``.

    Returns ``(voxels, labels)`` with ``labels[i] = 1`` iff the voxel is
    occupied.
    """
    from_x = rng.random(size) < plan.beta_star
    k = int(from_x.sum())
    voxels = np.empty((size, 3), dtype=np.int64)
    voxels[from_x] = cloud.points[rng.integers(0, len(cloud), k)]
    voxels[~from_x] = sample_candidates(cube_set, rng, size - k)
    labels = from_x.copy()
    member = membership or _Membership(cloud)
    labels[~from_x] = member(voxels[~from_x])
    return voxels, labels.astype(np.float64)


def sample_training_voxel(plan: SamplingPlan, cloud: VoxelizedCloud,
                          cube_set: CubeSet, rng: np.random.Generator):
    v, y = sample_training_voxels(plan, cloud, cube_set, rng, 1)
    return tuple(int(c) for c in v[0]), int(y[0])


# --------------------------------------------------------------------------
# loss

def focal_loss(p, y, alpha: float, gamma: float):
    """Alpha-balanced focal loss per sample (``p`` clamped first)."""
    p = np.clip(np.asarray(p, dtype=np.float64), P_EPS, 1 - P_EPS)
    y = np.asarray(y)
    pt = np.where(y == 1, p, 1 - p)
    at = np.where(y == 1, alpha, 1 - alpha)
    return -at * (1 - pt) ** gamma * np.log(pt)


def focal_loss_grad(p, y, alpha: float, gamma: float):
    """d focal_loss / d p, evaluated at the clamped probability."""
    p = np.clip(p, P_EPS, 1 - P_EPS)
    pos = y == 1
    pt = np.where(pos, p, 1 - p)
    at = np.where(pos, alpha, 1 - alpha)
    one = 1 - pt
    if gamma == 0:
        dpt = -at / pt
    else:
        dpt = at * (gamma * one ** (gamma - 1) * np.log(pt) - one ** gamma / pt)
    return np.where(pos, dpt, -dpt)


def _focal_objective(alpha, gamma):
    def objective(out, y):
        p = out[:, 0]
        yy = y.astype(p.dtype)
        loss = focal_loss(p, yy, alpha, gamma).mean()
        g = focal_loss_grad(p, yy, alpha, gamma) / len(p)
        return loss, g.astype(out.dtype)[:, None]
    return objective


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class GeomTrainConfig:
    lam: float = 0.0
    steps: int = 1_200_000
    batch_size: int = 4096
    beta: float = 0.5
    gamma: float = 2.0
    seed: int = 0
    step_size: float = 1 / 1024
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    weight_decay: float = 1e-4
    arch: NetworkArch = field(default=GEOMETRY_ARCH)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.arch.output_dim != 1:
            raise ValueError("the occupancy network has one output")

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.steps, self.batch_size, self.learning_rate,
                        self.lr_decay, self.weight_decay)


class GroupSampler:
    """Occupancy training batches for one or more frames.

    ``joint=True`` treats the frames as one 4D cloud: occupied draws come
    from the union of all frames and candidate draws from the union of the
    per-frame candidate sets. Otherwise a batch comes from a single frame.
    """

    def __init__(self, frames: Sequence[VoxelizedCloud],
                 cube_sets: Sequence[CubeSet], beta: float,
                 joint: bool = False):
        if len(frames) != len(cube_sets) or not frames:
            raise ValueError("need one cube set per frame")
        self.frames = list(frames)
        self.cube_sets = list(cube_sets)
        self.joint = joint
        self.members = [_Membership(f) for f in frames]
        if joint:
            n_x = sum(len(f) for f in frames)
            n_v = sum(candidate_count(c) for c in cube_sets)
            self.plan = plan_from_ratio(beta, n_x / n_v)
            self.point_frame = np.concatenate(
                [np.full(len(f), t) for t, f in enumerate(frames)])
            self.points = np.concatenate([f.points for f in frames])
            self.cube_frame = np.concatenate(
                [np.full(len(c), t) for t, c in enumerate(cube_sets)])
            self.cubes = np.concatenate([c.cubes for c in cube_sets])
            self.edge = cube_sets[0].grid.cube_edge
        else:
            self.plans = [make_sampling_plan(f, c, beta)
                          for f, c in zip(frames, cube_sets)]

    def draw(self, rng, size, frame=None):
        """``(voxels, frame_ids, labels)``."""
        if not self.joint:
            t = frame or 0
            v, y = sample_training_voxels(
                self.plans[t], self.frames[t], self.cube_sets[t], rng, size,
                self.members[t])
            return v, np.full(size, t), y
        from_x = rng.random(size) < self.plan.beta_star
        k = int(from_x.sum())
        voxels = np.empty((size, 3), dtype=np.int64)
        frames = np.empty(size, dtype=np.int64)
        pi = rng.integers(0, len(self.points), k)
        voxels[from_x] = self.points[pi]
        frames[from_x] = self.point_frame[pi]
        ci = rng.integers(0, len(self.cubes), size - k)
        local = rng.integers(0, self.edge, size=(size - k, 3))
        voxels[~from_x] = local + self.edge * self.cubes[ci]
        frames[~from_x] = self.cube_frame[ci]
        labels = from_x.copy()
        for t, member in enumerate(self.members):
            sel = ~from_x & (frames == t)
            labels[sel] = member(voxels[sel])
        return voxels, frames, labels.astype(np.float64)


def network_inputs(voxels: np.ndarray, frames, arch: NetworkArch,
                   resolution_bits: int, group_size: int) -> np.ndarray:
    """Positionally encoded network inputs for voxels (and frames in 4D)."""
    if arch.input_dim == 4:
        coords = normalize_coords(voxels, resolution_bits, frames, group_size)
    else:
        coords = normalize_coords(voxels, resolution_bits)
    return encode_batch(coords, arch.levels)


def train_geometry_group(frames: Sequence[VoxelizedCloud],
                         cube_sets: Sequence[CubeSet],
                         config: GeomTrainConfig, *,
                         control_points: int = 1, joint: bool = False,
                         init: Optional[np.ndarray] = None,
                         reference: Optional[NetworkParams] = None,
                         rng: Optional[np.random.Generator] = None,
                         log_every: int = 0) -> TrainResult:
    """Train F on a frame group.

    ``joint`` selects the spatio-temporal (4D) model, ``control_points > 1``
    a Bézier curve of networks; with neither there must be one frame.
    """
    arch = config.arch
    group = len(frames)
    if joint and arch.input_dim != 4:
        raise ValueError("the joint model needs a 4-input architecture")
    if not joint and control_points == 1 and group != 1:
        raise ValueError("a single spatial network codes one frame")
    sampler = GroupSampler(frames, cube_sets, config.beta, joint)
    if rng is None:
        rng = make_rng(config.seed, 0, 0)
    n = frames[0].resolution_bits
    if init is None:
        init = np.stack([init_params(arch, rng).flat
                         for _ in range(control_points)])

    def draw(r, t):
        v, f, y = sampler.draw(r, config.batch_size, t)
        return network_inputs(v, f, arch, n, group), y

    total = sum(len(f) for f in frames)
    return run_training(
        arch, init, config.schedule, rng, draw,
        _focal_objective(1.0 - config.beta, config.gamma),
        l1_weight=config.lam / total,
        reference=None if reference is None else reference.flat,
        group_size=group, log_every=log_every)


def train_geometry(cloud: VoxelizedCloud, cube_set: CubeSet,
                   config: GeomTrainConfig,
                   reference: Optional[NetworkParams] = None,
                   init: Optional[NetworkParams] = None,
                   rng: Optional[np.random.Generator] = None
                   ) -> NetworkParams:
    """Fit F to one frame; ``reference`` anchors the L1 term (residual mode)."""
    res = train_geometry_group(
        [cloud], [cube_set], config,
        init=None if init is None else init.flat[None, :],
        reference=reference, rng=rng)
    return res.params(config.arch)


# --------------------------------------------------------------------------
# inference

def iter_occupancy(params: NetworkParams, cube_set: CubeSet,
                   frame: Optional[int] = None, group_size: int = 1
                   ) -> Iterator[tuple]:
    """Yield ``(voxels, probabilities)`` blocks in candidate order."""
    n = cube_set.grid.resolution_bits
    for block in iterate_candidate_blocks(cube_set):
        if params.arch.input_dim == 4:
            coords = normalize_coords(block, n, frame or 0, group_size)
        else:
            coords = normalize_coords(block, n)
        yield block, predict_coords(params, coords)[:, 0]


def occupancy_probabilities(params: NetworkParams, cube_set: CubeSet,
                            frame: Optional[int] = None,
                            group_size: int = 1) -> tuple:
    """All candidates and their occupancy probabilities as two arrays."""
    vox, prob = [], []
    for v, p in iter_occupancy(params, cube_set, frame, group_size):
        vox.append(v)
        prob.append(p)
    if not vox:
        return np.empty((0, 3), dtype=np.int64), np.empty(0)
    return np.concatenate(vox), np.concatenate(prob)


def threshold_points(voxels: np.ndarray, probs: np.ndarray, tau: float,
                     resolution_bits: int) -> VoxelizedCloud:
    return VoxelizedCloud(resolution_bits, voxels[probs > tau])


def reconstruct_geometry(params: NetworkParams, cube_set: CubeSet,
                         tau: float, frame: Optional[int] = None,
                         group_size: int = 1) -> VoxelizedCloud:
    """Candidates whose probability is strictly greater than ``tau``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    v, p = occupancy_probabilities(params, cube_set, frame, group_size)
    return threshold_points(v, p, tau, cube_set.grid.resolution_bits)


class D1Objective:
    """D1 PSNR of thresholded candidates against a fixed original."""

    def __init__(self, voxels, probs, original: VoxelizedCloud):
        self.voxels = np.asarray(voxels)
        self.probs = np.asarray(probs)
        self.original = original
        self.tree = VoxelTree(original.points)
        self.peak = geometry_peak(original.resolution_bits)
        self.calls = 0

    def __call__(self, tau: float) -> float:
        self.calls += 1
        rec = self.voxels[self.probs > tau]
        if len(rec) == 0:
            return -math.inf
        e_rec = self.tree.sq_distances(rec).sum() / len(rec)
        e_orig = VoxelTree(rec).sq_distances(self.original.points).sum() / len(
            self.original)
        return psnr(float(max(e_rec, e_orig)), self.peak)


def golden_section_maximize(objective, steps: int) -> tuple:
    """Golden-section search for the maximum of ``objective`` on [0, 1].

    A probe value of ``-inf`` (empty reconstruction) always moves the
    right end in. Returns ``(tau, any_finite_probe)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    lo, hi = 0.0, 1.0
    d1 = d2 = None
    finite = False
    for _ in range(steps):
        m1 = lo + GOLDEN_LOW * (hi - lo)
        m2 = lo + GOLDEN_HIGH * (hi - lo)
        if d1 is None:
            d1 = objective(m1)
            finite |= d1 != -math.inf
        if d2 is None:
            d2 = objective(m2)
            finite |= d2 != -math.inf
        if d2 != -math.inf and d1 < d2:
            lo, d1, d2 = m1, d2, None
        else:
            hi, d2, d1 = m2, d1, None
    return (lo + hi) / 2, finite


def fine_tune_threshold(params: Optional[NetworkParams], cube_set: CubeSet,
                        original: VoxelizedCloud, steps: int = 30,
                        frame: Optional[int] = None, group_size: int = 1,
                        probabilities: Optional[tuple] = None) -> float:
    """Threshold maximizing D1 PSNR of the reconstruction.

    ``probabilities`` may pass precomputed ``(voxels, probs)``; otherwise
    they are inferred from ``params`` (which should be dequantized).
    """
    if probabilities is None:
        probabilities = occupancy_probabilities(params, cube_set, frame,
                                                group_size)
    objective = D1Objective(*probabilities, original)
    tau, finite = golden_section_maximize(objective, steps)
    if not finite:
        raise EmptyReconstructionError(
            "every probed threshold gives an empty reconstruction; the "
            "occupancy network did not learn the cloud")
    return tau


def choose_threshold_code(tau: float, objective, scale: int = 1 << 16) -> int:
    """16-bit code for ``tau``: the better of the two neighboring codes.

    The search tends to stop right at a plateau edge, where plain rounding
    could land on the wrong side.
    """
    base = math.floor(tau * scale)
    codes = sorted({min(max(c, 1), scale - 1) for c in (base, base + 1)})
    return max(codes, key=lambda c: (objective(c / scale), -abs(c / scale - tau)))
