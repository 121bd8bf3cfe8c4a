import math

import numpy as np
import pytest
from scipy.special import expit

from conftest import sphere_shell
from implicitpcc.geometry import (GOLDEN_HIGH, D1Objective,
                                  EmptyReconstructionError, GeomTrainConfig,
                                  GroupSampler, SamplingRatioError,
                                  choose_threshold_code, fine_tune_threshold,
                                  focal_loss, focal_loss_grad,
                                  golden_section_maximize, make_sampling_plan,
                                  occupancy_probabilities, plan_from_ratio,
                                  reconstruct_geometry, sample_training_voxels,
                                  train_geometry)
from implicitpcc.nn.network import NetworkArch, zeros
from implicitpcc.partition import (CubeSet, GridParams, build_cube_set,
                                   candidate_array)
from implicitpcc.pointcloud import VoxelizedCloud

SMALL = NetworkArch(levels_spatial=3, residual_blocks=1, hidden_width=16,
                    block_width=8)


def test_plan_example():
    p = plan_from_ratio(0.5, 0.1)
    assert p.beta_star == pytest.approx(4 / 9)
    assert p.alpha_star == pytest.approx(5 / 9)


def test_plan_uniform_when_beta_equals_zeta():
    p = plan_from_ratio(0.3, 0.3)
    assert p.beta_star == 0 and p.alpha_star == 1


def test_plan_limit_small_zeta():
    p = plan_from_ratio(0.7, 1e-12)
    assert p.beta_star == pytest.approx(0.7)
    assert p.alpha_star == pytest.approx(0.3)


def test_plan_rejects_low_beta():
    with pytest.raises(SamplingRatioError):
        plan_from_ratio(0.1, 0.2)
    with pytest.raises(ValueError):
        plan_from_ratio(1.0, 0.2)


@pytest.mark.parametrize("beta,zeta", [(0.2, 0.05), (0.6, 0.5),
                                       (0.99, 0.01)])
def test_plan_identities(beta, zeta):
    p = plan_from_ratio(beta, zeta)
    assert abs(p.beta_star + p.alpha_star - 1) <= 1e-12
    assert abs(p.beta_star + p.alpha_star * zeta - beta) <= 1e-12


def test_pure_uniform_draws():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    zeta = len(cloud) / (len(cs) * 512)
    plan = plan_from_ratio(zeta, zeta)
    rng = np.random.default_rng(0)
    v, y = sample_training_voxels(plan, cloud, cs, rng, 200_000)
    assert abs(y.mean() - zeta) < 0.005


def test_labels_are_true_occupancy():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    plan = make_sampling_plan(cloud, cs, 0.5)
    v, y = sample_training_voxels(plan, cloud, cs, np.random.default_rng(1),
                                  5000)
    occupied = {tuple(p) for p in cloud.points}
    assert all((tuple(a) in occupied) == bool(b) for a, b in zip(v, y))


def test_joint_sampler_frames_and_labels():
    a = sphere_shell(radius=4.6)
    b = sphere_shell(radius=6.1)
    cs = [build_cube_set(a, 2), build_cube_set(b, 2)]
    s = GroupSampler([a, b], cs, 0.5, joint=True)
    v, f, y = s.draw(np.random.default_rng(2), 200_000)
    assert abs(y.mean() - 0.5) < 0.005
    sets = [{tuple(p) for p in c.points} for c in (a, b)]
    for i in range(0, 200_000, 997):
        assert (tuple(v[i]) in sets[f[i]]) == bool(y[i])


def test_focal_examples():
    assert focal_loss(0.5, 1, 0.5, 2.0) == pytest.approx(
        -0.5 * 0.25 * math.log(0.5))
    assert abs(float(focal_loss(0.5, 1, 0.5, 2.0)) - 0.08664) < 1e-5
    assert focal_loss(0.999999, 1, 0.5, 2.0) < 1e-10
    p = np.array([0.1, 0.4, 0.9])
    y = np.array([1, 0, 1])
    bce = -np.where(y == 1, 0.3 * np.log(p), 0.7 * np.log(1 - p))
    np.testing.assert_allclose(focal_loss(p, y, 0.3, 0.0), bce, rtol=1e-14)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
def test_focal_gradient(gamma):
    p = np.linspace(0.02, 0.98, 25)
    h = 1e-6
    for label in (0, 1):
        y = np.full_like(p, label)
        fd = (focal_loss(p + h, y, 0.3, gamma)
              - focal_loss(p - h, y, 0.3, gamma)) / (2 * h)
        np.testing.assert_allclose(focal_loss_grad(p, y, 0.3, gamma), fd,
                                   rtol=1e-6)


def test_zero_network_thresholds():
    cs = CubeSet(GridParams(4, 2), [[0, 0, 0], [1, 2, 3]])
    net = zeros(NetworkArch(levels_spatial=2, residual_blocks=1,
                            hidden_width=4, block_width=4))
    assert len(reconstruct_geometry(net, cs, 0.0)) == 128
    assert len(reconstruct_geometry(net, cs, 0.5)) == 0


def test_batched_probabilities_match_single_voxels():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    from implicitpcc.nn.network import init_params, predict_coords
    from implicitpcc.nn.network import normalize_coords
    net = init_params(SMALL, np.random.default_rng(0))
    vox, probs = occupancy_probabilities(net, cs)
    np.testing.assert_array_equal(vox, candidate_array(cs))
    for i in range(0, len(vox), 211):
        one = predict_coords(net, normalize_coords(vox[i:i + 1], 5))[0, 0]
        assert one == probs[i]


def test_threshold_nesting():
    rng = np.random.default_rng(5)
    cs = CubeSet(GridParams(4, 2), [[0, 0, 0], [3, 3, 3]])
    from implicitpcc.geometry import threshold_points
    vox = candidate_array(cs)
    probs = rng.random(len(vox))
    prev = None
    for tau in np.linspace(0, 0.99, 30):
        cur = {tuple(p) for p in threshold_points(vox, probs, tau, 4).points}
        if prev is not None:
            assert cur <= prev
        prev = cur


def _synthetic_field(cloud, cs):
    vox = candidate_array(cs)
    occupied = {tuple(p) for p in cloud.points}
    probs = np.array([0.9 if tuple(v) in occupied else 0.1 for v in vox])
    return vox, probs


def test_golden_section_on_synthetic_field():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    field = _synthetic_field(cloud, cs)
    tau = fine_tune_threshold(None, cs, cloud, 30, probabilities=field)
    assert 0.1 < tau < 0.9
    rec = field[0][field[1] > tau]
    assert VoxelizedCloud(5, rec) == cloud


def test_empty_everywhere_raises():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    vox = candidate_array(cs)
    with pytest.raises(EmptyReconstructionError):
        fine_tune_threshold(None, cs, cloud, 20,
                            probabilities=(vox, np.zeros(len(vox))))


def test_forty_steps_width():
    calls = []

    def f(t):
        calls.append(t)
        return -(t - 0.3) ** 2

    tau, finite = golden_section_maximize(f, 40)
    assert finite
    assert GOLDEN_HIGH ** 40 < 1e-8
    assert abs(tau - 0.3) < 1e-8
    # one fresh probe per contraction after the first
    assert len(calls) == 41


def test_empty_probe_moves_right_end():
    # finite only on [0, 0.2]; the maximum sits at the right edge
    tau, finite = golden_section_maximize(
        lambda t: t if t <= 0.2 else -math.inf, 40)
    assert finite and abs(tau - 0.2) < 1e-6


def test_choose_code_prefers_better_neighbor():
    # objective is a step: code 5000 is good, 4999 is bad
    def obj(t):
        return 1.0 if t >= 5000 / 65536 else 0.0

    tau = 4999.9 / 65536
    assert choose_threshold_code(tau, obj) == 5000
    assert choose_threshold_code(5000.2 / 65536, lambda t: 0.0) == 5000
    assert choose_threshold_code(0.0, lambda t: 0.0) == 1


def test_d1_objective_matches_metric():
    from implicitpcc.metrics import d1_psnr
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    vox = candidate_array(cs)
    probs = np.random.default_rng(0).random(len(vox))
    obj = D1Objective(vox, probs, cloud)
    for tau in (0.3, 0.7, 0.95):
        rec = vox[probs > tau]
        assert obj(tau) == d1_psnr(rec, cloud.points, 5)
    assert obj(1.0) == -math.inf
    assert obj.calls == 4


def test_training_is_deterministic_and_learns():
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    cfg = GeomTrainConfig(steps=300, batch_size=256, arch=SMALL)
    a = train_geometry(cloud, cs, cfg)
    b = train_geometry(cloud, cs, cfg)
    assert a == b
    vox, probs = occupancy_probabilities(a, cs)
    occ = {tuple(p) for p in cloud.points}
    mask = np.array([tuple(v) in occ for v in vox])
    assert probs[mask].mean() > probs[~mask].mean()


def test_training_loss_decreases():
    from implicitpcc.geometry import train_geometry_group
    cloud = sphere_shell()
    cs = build_cube_set(cloud, 2)
    cfg = GeomTrainConfig(steps=600, batch_size=256, arch=SMALL)
    res = train_geometry_group([cloud], [cs], cfg, log_every=100)
    losses = [v for _, v in res.losses]
    assert len(losses) == 6
    assert losses[-1] < losses[0]
    assert np.isfinite(expit(res.controls)).all()


def test_config_validation():
    with pytest.raises(ValueError):
        GeomTrainConfig(gamma=-1)
    with pytest.raises(ValueError):
        GeomTrainConfig(arch=NetworkArch(output_dim=3))
