"""High-level policy tests: featurization, forward/anchor structure, the
behavior-cloning loss and its gradients, training determinism, and rollouts."""

import numpy as np
import pytest

from arch.nets import flatten_grads
from arch.policy_high import (
    AUG_SIGMA,
    FRAME_DIM,
    H_WINDOW,
    LAMBDA_PARAM,
    N_PRIMITIVES,
    OBS_DIM,
    POSE_T_IDX,
    Demonstration,
    DemoStep,
    EmptyBatch,
    EmptyDataset,
    HighLevelPolicy,
    HistoryWindow,
    _augment,
    bc_loss,
    bc_loss_and_grads,
    featurize_frame,
    load_demos,
    param_anchors,
    pose_param,
    rollout_high,
    save_demos,
    select_action,
    selection_accuracy,
    softmax,
    train_bc,
)
from arch.primitives import ExecContext, PrimitiveCall, PrimitiveId
from arch.scenes import default_scene
from arch.workcell import ANG_LIMIT, DT, LIN_LIMIT, VelocityCommand, Workcell

SCENE = default_scene()


class ScriptedInsert:
    """Proportional stand-in for the trained insertion policy."""

    def command(self, obs):
        v = np.array([np.clip(-obs[0] / DT, -LIN_LIMIT, LIN_LIMIT),
                      np.clip(-obs[1] / DT, -LIN_LIMIT, LIN_LIMIT),
                      -LIN_LIMIT])
        return VelocityCommand(v, float(np.clip(-obs[3] / DT, -ANG_LIMIT, ANG_LIMIT)))


def _demo_batch(n=12, seed=5):
    """Synthetic supervised batch with realistic scale."""
    g = np.random.default_rng(seed)
    obs = g.normal(0.0, 0.1, size=(n, OBS_DIM))
    ids = g.integers(0, N_PRIMITIVES, size=n)
    params = g.normal(0.0, 0.1, size=(n, 4))
    return {"obs": obs, "id": ids, "param": params}


# ---------------------------------------------------------------------------
# featurization and history


def test_featurize_frame_layout():
    env = Workcell(SCENE, seed=0, target="hexagon")
    obs = env.observe()
    frame = featurize_frame(obs, "hexagon", env.geom.board_xy, 2, True)
    assert frame.shape == (FRAME_DIM,)
    # board-relative EE pose
    np.testing.assert_allclose(frame[0], obs.ee[0] - env.geom.board_xy[0])
    np.testing.assert_allclose(frame[1], obs.ee[1] - env.geom.board_xy[1])
    assert frame[4] == 0.0  # gripper open
    assert frame[5] == 0.0  # nothing attached
    one_hot = frame[18:22]
    assert one_hot[2] == 1.0 and one_hot.sum() == 1.0
    assert frame[22] == 1.0  # previous primitive succeeded


def test_history_window_pads_oldest_first():
    w = HistoryWindow()
    assert np.all(w.vector() == 0)
    a = np.full(FRAME_DIM, 1.0)
    b = np.full(FRAME_DIM, 2.0)
    w.push(a)
    w.push(b)
    vec = w.vector()
    assert vec.shape == (OBS_DIM,)
    np.testing.assert_array_equal(vec[: 2 * FRAME_DIM], 0.0)
    np.testing.assert_array_equal(vec[2 * FRAME_DIM: 3 * FRAME_DIM], a)
    np.testing.assert_array_equal(vec[3 * FRAME_DIM:], b)
    for _ in range(5):
        w.push(b)
    assert len(w.frames) == H_WINDOW


# ---------------------------------------------------------------------------
# forward structure


def test_forward_zero_weights_zero_obs():
    policy = HighLevelPolicy(seed=0)
    policy.net.set_flat(np.zeros_like(policy.net.get_flat()))
    logits, param = policy.forward(np.zeros(OBS_DIM))
    np.testing.assert_array_equal(logits, 0.0)
    np.testing.assert_array_equal(param, 0.0)  # anchor 0 + bias 0


def test_param_anchors_match_frame_poses():
    env = Workcell(SCENE, seed=3, target="hexagon")
    obs = env.observe()
    frame = featurize_frame(obs, "hexagon", env.geom.board_xy, None, False)
    vec = np.concatenate([np.zeros(3 * FRAME_DIM), frame])
    bx, by = env.geom.board_xy
    shift = np.array([bx, by, 0.0, 0.0])
    grasp = param_anchors(vec[None], [int(PrimitiveId.GRASP)])[0]
    np.testing.assert_allclose(grasp + shift, obs.object_estimates["hexagon"])
    place = param_anchors(vec[None], [int(PrimitiveId.PLACE)])[0]
    np.testing.assert_allclose(place + shift, obs.fixture_q)
    ins = param_anchors(vec[None], [int(PrimitiveId.INSERT)])[0]
    np.testing.assert_allclose(ins + shift, obs.hole_q["hole_hexagon"])


def test_select_action_tie_breaks_lowest_id():
    policy = HighLevelPolicy(seed=0)
    policy.net.set_flat(np.zeros_like(policy.net.get_flat()))
    call = select_action(policy, np.zeros(OBS_DIM))
    assert call.id == PrimitiveId.GRASP  # all logits tied -> lowest id


def test_select_action_sample_needs_rng_and_bounds_clamp():
    policy = HighLevelPolicy(seed=0)
    with pytest.raises(ValueError):
        select_action(policy, np.zeros(OBS_DIM), mode="sample")
    g = np.random.default_rng(0)
    call = select_action(policy, np.zeros(OBS_DIM), mode="sample", rng=g,
                         bounds=(SCENE.bounds_lo, SCENE.bounds_hi))
    assert np.all(call.param >= SCENE.bounds_lo)
    assert np.all(call.param <= SCENE.bounds_hi)
    with pytest.raises(ValueError):
        select_action(policy, np.zeros(OBS_DIM), mode="nope")


def test_softmax_rows_normalize():
    p = softmax(np.array([[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(p[0], 0.25)
    assert p[1, 0] > 0.999


# ---------------------------------------------------------------------------
# loss


def test_bc_loss_uniform_logits_is_log4():
    policy = HighLevelPolicy(seed=0)
    policy.net.set_flat(np.zeros_like(policy.net.get_flat()))
    batch = {"obs": np.zeros((3, OBS_DIM)), "id": [0, 1, 3],
             "param": np.zeros((3, 4))}
    assert bc_loss(policy, batch) == pytest.approx(np.log(4.0), abs=1e-12)


def test_bc_loss_param_error_term():
    policy = HighLevelPolicy(seed=0)
    policy.net.set_flat(np.zeros_like(policy.net.get_flat()))
    batch = {"obs": np.zeros((1, OBS_DIM)), "id": [2],
             "param": np.array([[1.0, 0.0, 0.0, 0.0]])}
    expected = np.log(4.0) + LAMBDA_PARAM * 1.0
    assert bc_loss(policy, batch) == pytest.approx(expected, abs=1e-12)


def test_bc_loss_confident_correct_is_small():
    policy = HighLevelPolicy(seed=0)
    policy.net.set_flat(np.zeros_like(policy.net.get_flat()))
    policy.net.biases[-1][1] = 25.0  # hard logit for primitive 1
    batch = {"obs": np.zeros((2, OBS_DIM)), "id": [1, 1],
             "param": np.zeros((2, 4))}
    assert bc_loss(policy, batch) < 1e-9


def test_bc_loss_empty_batch_raises():
    policy = HighLevelPolicy(seed=0)
    with pytest.raises(EmptyBatch):
        bc_loss(policy, {"obs": np.zeros((0, OBS_DIM)), "id": [], "param": np.zeros((0, 4))})


def test_bc_gradients_match_finite_differences():
    policy = HighLevelPolicy(seed=7, hidden=(8,))
    batch = _demo_batch()
    _, grads = bc_loss_and_grads(policy, batch)
    flat_g = flatten_grads(grads)
    theta = policy.net.get_flat()
    g = np.random.default_rng(11)
    eps = 1e-6
    for idx in g.choice(theta.size, size=24, replace=False):
        theta_p = theta.copy()
        theta_p[idx] += eps
        policy.net.set_flat(theta_p)
        lp = bc_loss(policy, batch)
        theta_m = theta.copy()
        theta_m[idx] -= eps
        policy.net.set_flat(theta_m)
        lm = bc_loss(policy, batch)
        fd = (lp - lm) / (2 * eps)
        assert flat_g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)
    policy.net.set_flat(theta)


# ---------------------------------------------------------------------------
# augmentation


def test_augment_preserves_padding_and_non_pose_entries():
    g = np.random.default_rng(0)
    obs = np.zeros((4, OBS_DIM))
    obs[:, 3 * FRAME_DIM:] = 0.3  # only the newest frame is real
    out = _augment(obs, g, drop_p=0.0)
    np.testing.assert_array_equal(out[:, : 3 * FRAME_DIM], 0.0)
    changed = np.flatnonzero(np.any(out != obs, axis=0))
    assert set(changed) <= set(POSE_T_IDX.tolist())
    newest_t = POSE_T_IDX[POSE_T_IDX >= 3 * FRAME_DIM]
    spread = np.abs(out[:, newest_t] - 0.3)
    assert np.all(spread < 6 * AUG_SIGMA) and spread.max() > 0


def test_augment_history_dropout_zeroes_oldest_frames():
    g = np.random.default_rng(1)
    obs = np.full((64, OBS_DIM), 0.2)
    out = _augment(obs, g, sigma=0.0, drop_p=1.0)
    frames = out.reshape(64, H_WINDOW, FRAME_DIM)
    zeroed = np.all(frames == 0.0, axis=2)  # (B, H)
    assert zeroed.any()
    # zeroed frames are always a prefix (oldest first), newest never dropped
    assert not zeroed[:, -1].any()
    for row in zeroed:
        k = row.sum()
        assert row[:k].all() and not row[k:].any()


# ---------------------------------------------------------------------------
# demonstrations and training


def _tiny_demos(n_trials=4, steps=3, seed=2):
    g = np.random.default_rng(seed)
    demos = []
    for t in range(n_trials):
        steps_list = []
        for k in range(steps):
            obs = g.normal(0.0, 0.1, size=OBS_DIM)
            call = PrimitiveCall(PrimitiveId(k % N_PRIMITIVES),
                                 g.normal(0.0, 0.1, size=4))
            steps_list.append(DemoStep(obs, call, "success"))
        demos.append(Demonstration(t, "successful", steps_list))
    return demos


def test_demo_jsonl_roundtrip(tmp_path):
    demos = _tiny_demos()
    demos[-1].label = "recovery"
    path = tmp_path / "demos.jsonl"
    save_demos(path, demos)
    back = load_demos(path)
    assert len(back) == len(demos)
    for a, b in zip(demos, back):
        assert a.trial == b.trial and a.label == b.label
        for sa, sb in zip(a.steps, b.steps):
            np.testing.assert_allclose(sa.obs, sb.obs)
            assert sa.call.id == sb.call.id
            np.testing.assert_allclose(sa.call.param, sb.call.param)
            assert sa.status == sb.status


def test_demonstration_validation():
    with pytest.raises(ValueError):
        Demonstration(0, "other", [DemoStep(np.zeros(OBS_DIM),
                                            PrimitiveCall(PrimitiveId.MOVE, np.zeros(4)),
                                            "success")])
    with pytest.raises(ValueError):
        Demonstration(0, "successful", [])


def test_train_bc_empty_dataset_raises():
    with pytest.raises(EmptyDataset):
        train_bc([])


def test_train_bc_deterministic_per_seed():
    demos = _tiny_demos()
    a = train_bc(demos, epochs=20, seed=3)
    b = train_bc(demos, epochs=20, seed=3)
    c = train_bc(demos, epochs=20, seed=4)
    np.testing.assert_array_equal(a.net.get_flat(), b.net.get_flat())
    assert not np.array_equal(a.net.get_flat(), c.net.get_flat())


def test_train_bc_memorizes_single_demo():
    demos = _tiny_demos(n_trials=1, steps=4)
    policy = train_bc(demos, epochs=400, seed=0)
    assert selection_accuracy(policy, demos) == 1.0
    obs = np.stack([s.obs for s in demos[0].steps])
    ids = [int(s.call.id) for s in demos[0].steps]
    _, pred = policy.forward(obs, ids=ids)
    target = np.stack([s.call.param for s in demos[0].steps])
    assert np.max(np.abs(pred - target)) < 0.02


def test_checkpoint_roundtrip(tmp_path):
    demos = _tiny_demos()
    policy = train_bc(demos, epochs=10, seed=1)
    path = tmp_path / "high.archpol"
    policy.save(path)
    back = HighLevelPolicy.load(path)
    obs = np.zeros(OBS_DIM)
    la, pa = policy.forward(obs)
    lb, pb = back.forward(obs)
    # the checkpoint stores float32 tensors
    np.testing.assert_allclose(la, lb, atol=1e-6)
    np.testing.assert_allclose(pa, pb, atol=1e-6)
    np.testing.assert_allclose(policy.par_mu, back.par_mu, atol=1e-7)


# ---------------------------------------------------------------------------
# rollout


def test_rollout_zero_budget_fails_cleanly():
    env = Workcell(SCENE, seed=0, target="hexagon")
    policy = HighLevelPolicy(seed=0)
    rec = rollout_high(env, policy, ScriptedInsert(), max_primitives=0)
    assert rec["success"] is False and rec["l"] == 0 and rec["outcomes"] == []


def test_rollout_rejects_unknown_param_source():
    env = Workcell(SCENE, seed=0, target="hexagon")
    with pytest.raises(ValueError):
        rollout_high(env, HighLevelPolicy(seed=0), ScriptedInsert(),
                     param_source="oracle")


def test_rollout_pose_param_source_succeeds():
    # with pose-derived parameters, primitive selection alone decides the
    # trial; an untrained net picks Grasp on ties, which stalls -- use the
    # scripted expert sequencing via a trained-from-one-trial policy instead
    from arch.oracle import run_oracle_trial

    ins = ScriptedInsert()
    env = Workcell(SCENE, seed=41, target="hexagon", placement=(0, 0))
    record = run_oracle_trial(env, ins)
    assert record["success"]
    demos = [Demonstration(0, "successful", record["steps"])]
    policy = train_bc(demos, epochs=400, seed=0)
    env2 = Workcell(SCENE, seed=41, target="hexagon", placement=(0, 0))
    rec = rollout_high(env2, policy, ins, param_source="pose")
    assert rec["success"] and rec["l"] == record["l"]


def test_pose_param_grasp_targets_estimate():
    env = Workcell(SCENE, seed=9, target="hexagon")
    obs = env.observe()
    p = pose_param(env, obs, PrimitiveId.GRASP)
    est = obs.object_estimates["hexagon"]
    np.testing.assert_allclose(p[:2], est[:2])
    assert p[2] > est[2]
    assert p[3] == pytest.approx(est[3])
