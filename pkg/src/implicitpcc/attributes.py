"""Color network: target transfer, training and attribute reconstruction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import network_inputs
from .nn.network import NetworkArch, NetworkParams, init_params, normalize_coords, predict_coords
from .pointcloud import VoxelizedCloud
from .spatial import VoxelTree
from .training import Schedule, TrainResult, make_rng, run_training

ATTRIBUTE_ARCH = NetworkArch(residual_blocks=3, output_dim=3,
                             activation="sine", omega0=64.0)


@dataclass(frozen=True, eq=False)
class ColorTarget:
    """Expected color in [0, 1] for each reconstructed voxel."""

    points: np.ndarray
    colors: np.ndarray
    resolution_bits: int

    def __len__(self):
        return len(self.points)


def build_color_targets(reconstructed: VoxelizedCloud,
                        original: VoxelizedCloud) -> ColorTarget:
    """Color of each reconstructed voxel's nearest original point.

    Ties go to the lexicographically smallest original coordinate.
    """
    if not original.has_colors:
        raise ValueError("the original cloud has no colors")
    if len(reconstructed) == 0:
        raise ValueError("the reconstructed cloud is empty")
    idx, _ = VoxelTree(original.points).nearest(reconstructed.points)
    colors = original.colors[idx].astype(np.float64) / 255.0
    return ColorTarget(reconstructed.points, colors,
                       reconstructed.resolution_bits)


@dataclass(frozen=True)
class AttrTrainConfig:
    lam: float = 0.0
    steps: int = 800_000
    batch_size: int = 4096
    seed: int = 0
    step_size: float = 1 / 4096
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    weight_decay: float = 1e-4
    arch: NetworkArch = field(default=ATTRIBUTE_ARCH)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.arch.output_dim != 3:
            raise ValueError("the color network has three outputs")

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.steps, self.batch_size, self.learning_rate,
                        self.lr_decay, self.weight_decay)


def color_loss(out: np.ndarray, target: np.ndarray) -> tuple:
    """Squared error summed over channels, averaged over the batch."""
    diff = out - target.astype(out.dtype)
    loss = float((diff * diff).sum(axis=1).mean())
    return loss, (2.0 / len(out)) * diff


def train_attribute_group(targets: Sequence[ColorTarget],
                          config: AttrTrainConfig, original_points: int, *,
                          control_points: int = 1, joint: bool = False,
                          init: Optional[np.ndarray] = None,
                          reference: Optional[NetworkParams] = None,
                          rng: Optional[np.random.Generator] = None,
                          log_every: int = 0) -> TrainResult:
    """Train G on the reconstructed voxels of a frame group.

    Batches are uniform with replacement over the reconstructed voxels
    (over their union across frames in the joint model). The L1 weight is
    ``lam / original_points``.
    """
    arch = config.arch
    group = len(targets)
    if joint and arch.input_dim != 4:
        raise ValueError("the joint model needs a 4-input architecture")
    if not joint and control_points == 1 and group != 1:
        raise ValueError("a single spatial network codes one frame")
    if any(len(t) == 0 for t in targets):
        raise ValueError("empty color target")
    n = targets[0].resolution_bits
    if rng is None:
        rng = make_rng(config.seed, 0, 1)
    if init is None:
        init = np.stack([init_params(arch, rng).flat
                         for _ in range(control_points)])
    if joint:
        pts = np.concatenate([t.points for t in targets])
        cols = np.concatenate([t.colors for t in targets])
        fr = np.concatenate([np.full(len(t), i) for i, t in enumerate(targets)])

    def draw(r, t):
        if joint:
            i = r.integers(0, len(pts), config.batch_size)
            return network_inputs(pts[i], fr[i], arch, n, group), cols[i]
        tg = targets[t or 0]
        i = r.integers(0, len(tg), config.batch_size)
        return (network_inputs(tg.points[i], None, arch, n, group),
                tg.colors[i])

    return run_training(
        arch, init, config.schedule, rng, draw, color_loss,
        l1_weight=config.lam / original_points,
        reference=None if reference is None else reference.flat,
        group_size=group, log_every=log_every)


def train_attributes(targets: ColorTarget, config: AttrTrainConfig,
                     original_points: Optional[int] = None,
                     reference: Optional[NetworkParams] = None,
                     init: Optional[NetworkParams] = None,
                     rng: Optional[np.random.Generator] = None
                     ) -> NetworkParams:
    res = train_attribute_group(
        [targets], config, original_points or len(targets),
        init=None if init is None else init.flat[None, :],
        reference=reference, rng=rng)
    return res.params(config.arch)


def colors_to_bytes(c: np.ndarray) -> np.ndarray:
    """[0, 1] -> 0..255 with halves rounded up."""
    return np.clip(np.floor(255.0 * np.asarray(c) + 0.5), 0, 255).astype(
        np.uint8)


def predict_colors(params: NetworkParams, points: np.ndarray,
                   resolution_bits: int, frame: Optional[int] = None,
                   group_size: int = 1) -> np.ndarray:
    if params.arch.input_dim == 4:
        coords = normalize_coords(points, resolution_bits, frame or 0,
                                  group_size)
    else:
        coords = normalize_coords(points, resolution_bits)
    return predict_coords(params, coords)


def reconstruct_attributes(params: NetworkParams,
                           reconstructed: VoxelizedCloud,
                           frame: Optional[int] = None,
                           group_size: int = 1) -> VoxelizedCloud:
    """Attach network colors to every reconstructed voxel."""
    c = predict_colors(params, reconstructed.points,
                       reconstructed.resolution_bits, frame, group_size)
    return VoxelizedCloud(reconstructed.resolution_bits, reconstructed.points,
                          colors_to_bytes(c))
