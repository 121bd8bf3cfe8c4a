"""scikit-learn style wrappers around the occupancy and color networks.

These are conveniences for experimentation; the codec itself uses the
functional API in :mod:`implicitpcc.geometry` and
:mod:`implicitpcc.attributes`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attributes import (AttrTrainConfig, ColorTarget, colors_to_bytes,
                         predict_colors, train_attributes)
from .geometry import (GeomTrainConfig, fine_tune_threshold,
                       occupancy_probabilities, threshold_points,
                       train_geometry)
from .nn.network import NetworkArch, normalize_coords, predict_coords
from .nn.quantization import dequantize, quantize
from .partition import build_cube_set
from .pointcloud import VoxelizedCloud
from .training import make_rng


def _voxels(X, resolution_bits):
    X = check_array(X, dtype=np.int64)
    if X.shape[1] != 3:
        raise ValueError(f"expected (n, 3) voxel coordinates, got {X.shape}")
    if X.min() < 0 or X.max() >= 1 << resolution_bits:
        raise ValueError(
            f"voxel coordinates must lie in [0, {1 << resolution_bits})")
    return X


class OccupancyField(ClassifierMixin, BaseEstimator):
    """Binary occupancy classifier over the voxels of an ``N``-bit grid.

    ``fit`` takes the occupied voxels of one cloud; ``predict`` labels any
    voxels by thresholding the (optionally quantized) network output.
    """

    def __init__(self, resolution_bits=10, cube_bits=5, lam=0.0,
                 steps=1_200_000, batch_size=4096, beta=0.5, gamma=2.0,
                 seed=0, step_size=1 / 1024, levels=12, hidden_width=512,
                 block_width=128, residual_blocks=2, threshold_steps=30,
                 quantize=True):
        self.resolution_bits = resolution_bits
        self.cube_bits = cube_bits
        self.lam = lam
        self.steps = steps
        self.batch_size = batch_size
        self.beta = beta
        self.gamma = gamma
        self.seed = seed
        self.step_size = step_size
        self.levels = levels
        self.hidden_width = hidden_width
        self.block_width = block_width
        self.residual_blocks = residual_blocks
        self.threshold_steps = threshold_steps
        self.quantize = quantize

    def _config(self):
        arch = NetworkArch(levels_spatial=self.levels,
                           residual_blocks=self.residual_blocks,
                           hidden_width=self.hidden_width,
                           block_width=self.block_width, activation="relu")
        return GeomTrainConfig(
            lam=self.lam, steps=self.steps, batch_size=self.batch_size,
            beta=self.beta, gamma=self.gamma, seed=self.seed,
            step_size=self.step_size, arch=arch)

    def fit(self, X, y=None):
        X = _voxels(X, self.resolution_bits)
        cloud = VoxelizedCloud(self.resolution_bits, np.unique(X, axis=0))
        self.cube_set_ = build_cube_set(cloud, self.cube_bits)
        params = train_geometry(cloud, self.cube_set_, self._config(),
                                rng=make_rng(self.seed, 0, 0))
        if self.quantize:
            params = dequantize(quantize(params, self.step_size))
        self.params_ = params
        self._probs = occupancy_probabilities(params, self.cube_set_)
        self.threshold_ = fine_tune_threshold(
            params, self.cube_set_, cloud, self.threshold_steps,
            probabilities=self._probs)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = 3
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = _voxels(X, self.resolution_bits)
        p = predict_coords(self.params_,
                           normalize_coords(X, self.resolution_bits))[:, 0]
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > self.threshold_).astype(int)

    def reconstruct(self) -> VoxelizedCloud:
        """All candidate voxels classified as occupied."""
        check_is_fitted(self, "params_")
        return threshold_points(*self._probs, self.threshold_,
                                self.resolution_bits)


class ColorField(RegressorMixin, BaseEstimator):
    """Regressor from voxel coordinates to RGB colors (0..255 scale)."""

    def __init__(self, resolution_bits=10, lam=0.0, steps=800_000,
                 batch_size=4096, seed=0, step_size=1 / 4096, levels=12,
                 hidden_width=512, block_width=128, residual_blocks=3,
                 omega0=64.0, quantize=True):
        self.resolution_bits = resolution_bits
        self.lam = lam
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.step_size = step_size
        self.levels = levels
        self.hidden_width = hidden_width
        self.block_width = block_width
        self.residual_blocks = residual_blocks
        self.omega0 = omega0
        self.quantize = quantize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True)
        X = _voxels(X, self.resolution_bits)
        y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
        if y.shape[1] != 3 or y.min() < 0 or y.max() > 255:
            raise ValueError("y must be (n, 3) colors in [0, 255]")
        arch = NetworkArch(levels_spatial=self.levels,
                           residual_blocks=self.residual_blocks,
                           hidden_width=self.hidden_width,
                           block_width=self.block_width, output_dim=3,
                           activation="sine", omega0=self.omega0)
        cfg = AttrTrainConfig(lam=self.lam, steps=self.steps,
                              batch_size=self.batch_size, seed=self.seed,
                              step_size=self.step_size, arch=arch)
        targets = ColorTarget(X, y / 255.0, self.resolution_bits)
        params = train_attributes(targets, cfg,
                                  rng=make_rng(self.seed, 0, 1))
        if self.quantize:
            params = dequantize(quantize(params, self.step_size))
        self.params_ = params
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = _voxels(X, self.resolution_bits)
        return 255.0 * predict_colors(self.params_, X, self.resolution_bits)

    def predict_bytes(self, X):
        """8-bit colors as the decoder would output them."""
        check_is_fitted(self, "params_")
        X = _voxels(X, self.resolution_bits)
        return colors_to_bytes(
            predict_colors(self.params_, X, self.resolution_bits))
