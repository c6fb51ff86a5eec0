"""Pose refinement tests: surface sampling statistics, simulated observation
properties, Chamfer descent convergence, symmetry handling, equivariance."""

import numpy as np
import pytest

from arch.geometry import CrossSection, DegenerateShape, PointCloud, Pose, pose_distance
from arch.pose_refine import (
    RefineConfig,
    TooOccluded,
    bench_trial,
    pose_errors,
    refine_pose,
    run_pose_bench,
    sample_model_cloud,
    simulate_observation,
)
from arch.rng import RngStream
from arch.scenes import default_scene
from arch.workcell import NoiseSpec, WorkcellState

SCENE = default_scene()

UNIT_SQUARE = CrossSection.polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def _state_with(name, q):
    return WorkcellState(np.zeros(4), "open", None, None,
                         {name: np.asarray(q, dtype=float)}, {name: True}, 0.0, 0)


# ---------------------------------------------------------------------------
# sampling


def test_unit_square_bounding_box():
    cloud = sample_model_cloud(UNIT_SQUARE, 0.4, 4000, seed=1)
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    np.testing.assert_allclose(lo, [0, 0, 0], atol=0.02)
    np.testing.assert_allclose(hi, [1, 1, 0.4], atol=0.02)
    assert np.all(pts[:, 2] >= 0) and np.all(pts[:, 2] <= 0.4)


def test_area_weighting_proportions():
    # unit square h=0.5: sides 4*0.5=2, top 1, bottom 1 -> side fraction 0.5
    cloud = sample_model_cloud(UNIT_SQUARE, 0.5, 8000, seed=2)
    z = cloud.points[:, 2]
    frac_top = np.mean(z == 0.5)
    frac_bot = np.mean(z == 0.0)
    assert frac_top == pytest.approx(0.25, abs=0.001)
    assert frac_bot == pytest.approx(0.25, abs=0.001)


def test_circle_side_samples_on_radius():
    sec = CrossSection.circle(0.015)
    cloud = sample_model_cloud(sec, 0.05, 8, seed=3, faces=("side",))
    r = np.linalg.norm(cloud.points[:, :2], axis=1)
    np.testing.assert_allclose(r, 0.015, atol=1e-9)
    assert len(cloud) == 8


def test_sampler_deterministic():
    a = sample_model_cloud(UNIT_SQUARE, 0.3, 200, seed=9)
    b = sample_model_cloud(UNIT_SQUARE, 0.3, 200, seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    c = sample_model_cloud(UNIT_SQUARE, 0.3, 200, seed=10)
    assert not np.array_equal(a.points, c.points)


def test_sampler_errors():
    with pytest.raises(ValueError):
        sample_model_cloud(UNIT_SQUARE, 0.3, 4)
    with pytest.raises(DegenerateShape):
        sample_model_cloud(UNIT_SQUARE, 0.0, 100)


def test_section_area():
    assert UNIT_SQUARE.area() == pytest.approx(1.0)
    assert CrossSection.circle(2.0).area() == pytest.approx(np.pi * 4.0)


# ---------------------------------------------------------------------------
# simulated observation


def test_observation_subset_of_model_when_clean():
    q = [0.05, -0.02, 0.0, 0.7]
    state = _state_with("hexagon", q)
    noise = NoiseSpec()
    obs = simulate_observation(SCENE, state, "hexagon", [0.0, 0.0, 1.0], noise, seed=4)
    spec = SCENE.object("hexagon")
    model = sample_model_cloud(spec.section, spec.height, 512, seed=4)
    world = Pose.from_xyz_yaw(*q).apply(model.points)
    # every observed point appears exactly in the transformed model cloud
    from scipy.spatial import cKDTree

    d, _ = cKDTree(world).query(obs.points)
    assert np.max(d) < 1e-12
    assert len(obs) < len(model)  # culling removed something


def test_topdown_view_culls_bottom_face():
    state = _state_with("hexagon", [0.0, 0.0, 0.0, 0.0])
    obs = simulate_observation(SCENE, state, "hexagon", [0.0, 0.0, 2.0],
                               NoiseSpec(), seed=5)
    assert not np.any(obs.points[:, 2] == 0.0)
    # the top face is present
    assert np.any(obs.points[:, 2] == SCENE.object("hexagon").height)


def test_noise_magnitude_statistics():
    state = _state_with("hexagon", [0.0, 0.0, 0.0, 0.0])
    sigma = 5e-4
    clean = simulate_observation(SCENE, state, "hexagon", [0, 0, 2.0],
                                 NoiseSpec(), seed=6, n=2000)
    noisy = simulate_observation(SCENE, state, "hexagon", [0, 0, 2.0],
                                 NoiseSpec(cloud_noise_sigma=sigma), seed=6, n=2000)
    disp = np.linalg.norm(noisy.points - clean.points, axis=1)
    expected = sigma * np.sqrt(8 / np.pi)  # mean 3-D Gaussian norm
    assert abs(disp.mean() - expected) < 0.2 * expected


def test_dropout_and_too_occluded():
    state = _state_with("hexagon", [0.0, 0.0, 0.0, 0.0])
    full = simulate_observation(SCENE, state, "hexagon", [0, 0, 2.0],
                                NoiseSpec(), seed=7, n=1000)
    half = simulate_observation(SCENE, state, "hexagon", [0, 0, 2.0],
                                NoiseSpec(dropout_fraction=0.5), seed=7, n=1000)
    assert abs(len(half) / len(full) - 0.5) < 0.1
    with pytest.raises(TooOccluded):
        simulate_observation(SCENE, state, "hexagon", [0, 0, 2.0],
                             NoiseSpec(dropout_fraction=0.99), seed=7, n=200)


# ---------------------------------------------------------------------------
# refinement


def _clean_problem(seed=11, yaw=0.6):
    spec = SCENE.object("hexagon")
    truth = Pose.from_xyz_yaw(0.03, -0.01, 0.0, yaw)
    model = sample_model_cloud(spec.section, spec.height, 400, seed=seed,
                               faces=("side", "top"))
    observed = PointCloud(truth.apply(model.points))
    return model, observed, truth


def test_refine_fixed_point_at_truth():
    model, observed, truth = _clean_problem()
    res = refine_pose(model, observed, truth)
    assert res.final_loss < 1e-10
    assert np.linalg.norm(res.pose.translation - truth.translation) < 1e-6
    assert pose_errors(res.pose, truth, 1)[1] < 1e-5


def test_refine_recovers_offset_clean():
    model, observed, truth = _clean_problem()
    init = Pose.from_xyz_yaw(0.004, -0.003, 0.002, np.deg2rad(8)) @ truth
    trace = []
    res = refine_pose(model, observed, init, RefineConfig(max_iters=200), trace=trace)
    terr, rerr = pose_errors(res.pose, truth, 6)
    assert terr < 1e-3 and rerr < np.deg2rad(1.0)
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))  # monotone


def test_refine_circle_symmetry():
    spec = SCENE.object("circle")
    truth = Pose.from_xyz_yaw(0.0, 0.0, 0.0, 0.0)
    model = sample_model_cloud(spec.section, spec.height, 400, seed=13,
                               faces=("side", "top"))
    observed = PointCloud(truth.apply(model.points))
    init = Pose.from_xyz_yaw(0.004, 0.002, 0.0, np.deg2rad(15))
    res = refine_pose(model, observed, init, RefineConfig(max_iters=200))
    terr, rerr = pose_errors(res.pose, truth, 0)  # continuous symmetry
    assert terr < 1e-3
    assert rerr < np.deg2rad(2.0)  # axis tilt only; yaw unconstrained


def test_refine_equivariance():
    model, observed, truth = _clean_problem()
    init = Pose.from_xyz_yaw(0.003, 0.002, -0.001, np.deg2rad(5)) @ truth
    res = refine_pose(model, observed, init, RefineConfig(max_iters=60))
    g = Pose.from_xyz_yaw(0.11, -0.07, 0.05, 1.1)
    obs_g = PointCloud(g.apply(observed.points))
    res_g = refine_pose(model, obs_g, g @ init, RefineConfig(max_iters=60))
    assert pose_distance(res_g.pose, g @ res.pose) < 1e-6


def test_refine_empty_cloud_error():
    from arch.geometry import EmptyCloud

    model, observed, truth = _clean_problem()
    with pytest.raises(EmptyCloud):
        refine_pose(PointCloud(np.zeros((0, 3))), observed, truth)


def test_pose_errors_symmetry_branches():
    truth = Pose.from_xyz_yaw(0, 0, 0, 0.0)
    est = Pose.from_xyz_yaw(0, 0, 0, np.pi / 3)  # exactly one hexagon period
    terr, rerr = pose_errors(est, truth, 6)
    assert terr == 0.0
    assert rerr < 1e-9
    _, rerr_nosym = pose_errors(est, truth, 1)
    assert rerr_nosym == pytest.approx(np.pi / 3)


def test_bench_trials_recover():
    rows = run_pose_bench(SCENE, "hexagon", n_trials=30, seed=1)
    ok = sum(r["final_err_t"] < 1e-3 and r["final_err_r"] < np.deg2rad(1.0)
             for r in rows)
    assert ok >= 28, f"only {ok}/30 recovered"
    for r in rows:
        assert r["init_err_t"] == pytest.approx(0.005, rel=1e-6)
        assert {"trial", "iters", "loss"} <= set(r)
