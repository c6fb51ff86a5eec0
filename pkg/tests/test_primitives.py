"""Primitive executor tests: routing, preconditions, budgets, and the
grasp/move/place/insert choreography against the simulated workcell."""

import numpy as np
import pytest

from arch.primitives import (
    APPROACH_TOL_T,
    INSERT_BUDGET,
    MOVE_BUDGET,
    PRE_GRASP_HEIGHT,
    ExecContext,
    PrimitiveCall,
    PrimitiveId,
    PrimitiveResult,
    dispatch,
    exec_grasp,
    exec_insert,
    exec_move,
    exec_place,
)
from arch.scenes import default_scene
from arch.workcell import ANG_LIMIT, DT, LIN_LIMIT, VelocityCommand, Workcell

SCENE = default_scene()


@pytest.fixture(scope="module")
def ctx():
    # shared so the roadmap structure is built once
    return ExecContext()


def _env(seed=3, target="hexagon"):
    return Workcell(SCENE, seed=seed, target=target)


def _pre_grasp(env, name):
    q = env.state.object_q[name]
    h = env.spec.object(name).height
    return np.array([q[0], q[1], q[2] + h + PRE_GRASP_HEIGHT, q[3]])


def _grasped_env(seed, ctx, name="hexagon"):
    env = _env(seed, target=name)
    res = exec_grasp(env, _pre_grasp(env, name), ctx)
    assert res.success
    return env


def _approach(env, hole, name):
    """EE target placing the attached object centered over ``hole`` on its
    nearest symmetry branch, grasp offset compensated."""
    rel = env.state.attached_rel
    sym = env.geom.obj_symmetry[name]
    obj_yaw = env.state.object_q[name][3]
    if sym > 0:
        period = 2 * np.pi / sym
        branch = hole.yaw + period * np.round((obj_yaw - hole.yaw) / period)
    else:
        branch = obj_yaw
    h = env.spec.object(name).height
    return np.array([hole.xy[0] - rel[0], hole.xy[1] - rel[1],
                     env.geom.board_top + 0.010 + h, branch - rel[3]])


class ScriptedInsert:
    """Proportional descend-and-center controller standing in for the
    trained policy (observation layout matches InsertObservation)."""

    def command(self, obs):
        v = np.array([np.clip(-obs[0] / DT, -LIN_LIMIT, LIN_LIMIT),
                      np.clip(-obs[1] / DT, -LIN_LIMIT, LIN_LIMIT),
                      -LIN_LIMIT])
        return VelocityCommand(v, float(np.clip(-obs[3] / DT, -ANG_LIMIT, ANG_LIMIT)))


# ---------------------------------------------------------------------------
# data types


def test_call_json_roundtrip():
    call = PrimitiveCall(PrimitiveId.INSERT, [0.1, -0.14, 0.02, 0.5])
    d = call.to_json()
    assert d == {"id": 3, "param": [0.1, -0.14, 0.02, 0.5]}
    back = PrimitiveCall.from_json(d)
    assert back.id == PrimitiveId.INSERT
    np.testing.assert_array_equal(back.param, call.param)


def test_call_validation():
    with pytest.raises(ValueError):
        PrimitiveCall(PrimitiveId.MOVE, [1.0, 2.0])
    with pytest.raises(ValueError):
        PrimitiveCall(7, np.zeros(4))


def test_result_invariants():
    with pytest.raises(ValueError):
        PrimitiveResult("failure")  # missing reason
    with pytest.raises(ValueError):
        PrimitiveResult("partial")
    with pytest.raises(ValueError):
        PrimitiveResult("success", steps_used=-1)
    assert PrimitiveResult("success").success


# ---------------------------------------------------------------------------
# move


def test_move_to_current_pose_is_trivial(ctx):
    env = _env()
    res = exec_move(env, env.state.ee.copy(), ctx)
    assert res.success and res.steps_used == 0


def test_move_across_workspace(ctx):
    env = _env()
    target = np.array([-0.25, 0.15, 0.18, 1.0])
    res = exec_move(env, target, ctx)
    assert res.success
    assert res.steps_used <= MOVE_BUDGET
    assert np.linalg.norm(env.state.ee[:3] - target[:3]) < 1e-3
    assert abs(env.state.ee[3] - target[3]) < np.deg2rad(1.0)


def test_move_goal_inside_board_fails(ctx):
    env = _env()
    res = exec_move(env, np.array([0.19, 0.0, 0.02, 0.0]), ctx)
    assert not res.success
    assert res.failure_reason == "GoalInCollision"


# ---------------------------------------------------------------------------
# grasp


def test_grasp_at_object_pose(ctx):
    env = _env(seed=11)
    res = exec_grasp(env, _pre_grasp(env, "hexagon"), ctx)
    assert res.success
    assert env.state.attached == "hexagon"
    assert res.steps_used <= MOVE_BUDGET


def test_grasp_lateral_miss(ctx):
    env = _env(seed=12)
    pre = _pre_grasp(env, "hexagon")
    pre[0] += 0.030  # beyond the 8 mm attach tolerance
    res = exec_grasp(env, pre, ctx)
    assert not res.success
    assert res.failure_reason == "GraspMissed"
    assert env.state.attached is None


def test_grasp_while_holding_fails(ctx):
    env = _grasped_env(13, ctx)
    res = exec_grasp(env, _pre_grasp(env, "hexagon"), ctx)
    assert not res.success and res.failure_reason == "AlreadyHolding"


# ---------------------------------------------------------------------------
# place


def test_place_requires_holding(ctx):
    env = _env()
    res = exec_place(env, np.array([-0.2, -0.1, 0.12, 0.0]), ctx)
    assert not res.success and res.failure_reason == "NotHolding"


def test_place_on_free_table(ctx):
    env = _grasped_env(14, ctx)
    res = exec_place(env, np.array([-0.20, -0.10, 0.12, 0.0]), ctx)
    assert res.success
    assert env.state.attached is None
    q = env.state.object_q["hexagon"]
    assert q[2] == pytest.approx(SCENE.table_height)
    assert np.linalg.norm(q[:2] - [-0.20, -0.10]) < 0.01


def test_place_into_fixture_canonicalizes(ctx):
    env = _grasped_env(15, ctx)
    fx = env.geom.fixture_xy
    res = exec_place(env, np.array([fx[0], fx[1], 0.12, 0.0]), ctx)
    assert res.success
    q = env.state.object_q["hexagon"]
    np.testing.assert_allclose(q[:2], fx, atol=1e-9)
    assert q[3] == pytest.approx(env.geom.fixture_yaw)
    assert env.state.object_upright["hexagon"]


# ---------------------------------------------------------------------------
# insert


def test_insert_requires_holding(ctx):
    env = _env()
    hole = env.geom.hole_by_name["hole_hexagon"]
    res = exec_insert(env, ScriptedInsert(),
                      np.array([hole.xy[0], hole.xy[1], hole.top, hole.yaw]), ctx)
    assert not res.success and res.failure_reason == "NotHolding"


def test_insert_outside_approach_region(ctx):
    env = _grasped_env(16, ctx)
    hole = env.geom.hole_by_name["hole_hexagon"]
    # still at the grasp location, far from the hole
    assert np.linalg.norm(env.state.object_q["hexagon"][:2] - hole.xy) > APPROACH_TOL_T
    res = exec_insert(env, ScriptedInsert(),
                      np.array([hole.xy[0], hole.xy[1], hole.top, hole.yaw]), ctx)
    assert not res.success and res.failure_reason == "OutsideApproach"


def test_insert_scripted_success(ctx):
    env = _grasped_env(17, ctx)
    hole = env.geom.hole_by_name["hole_hexagon"]
    mv = exec_move(env, _approach(env, hole, "hexagon"), ctx)
    assert mv.success
    res = exec_insert(env, ScriptedInsert(),
                      np.array([hole.xy[0], hole.xy[1], hole.top, hole.yaw]), ctx)
    assert res.success, res.failure_reason
    assert res.steps_used <= INSERT_BUDGET
    assert env.check_inserted("hexagon")
    assert res.ft_trace is not None and len(res.ft_trace) == res.steps_used


def test_insert_wrong_hole_times_out(ctx):
    env = _grasped_env(18, ctx)
    hole = env.geom.hole_by_name["hole_circle"]  # undersized for the hexagon
    mv = exec_move(env, _approach(env, hole, "hexagon"), ctx)
    assert mv.success
    res = exec_insert(env, ScriptedInsert(),
                      np.array([hole.xy[0], hole.xy[1], hole.top, hole.yaw]), ctx)
    assert not res.success
    assert res.failure_reason == "InsertTimeout"
    assert res.steps_used == INSERT_BUDGET


# ---------------------------------------------------------------------------
# dispatch


def test_dispatch_routes_like_direct_calls(ctx):
    env_a = _env(seed=19)
    env_b = _env(seed=19)
    pre = _pre_grasp(env_a, "hexagon")
    ra = dispatch(env_a, PrimitiveCall(PrimitiveId.GRASP, pre), ctx)
    rb = exec_grasp(env_b, pre, ctx)
    assert ra.status == rb.status and ra.steps_used == rb.steps_used
    np.testing.assert_array_equal(env_a.state.ee, env_b.state.ee)

    mv = dispatch(env_a, PrimitiveCall(PrimitiveId.MOVE, [-0.25, 0.1, 0.2, 0.0]), ctx)
    assert mv.success
    pl = dispatch(env_a, PrimitiveCall(PrimitiveId.PLACE, [-0.25, 0.1, 0.12, 0.0]), ctx)
    assert pl.success


def test_dispatch_insert_uses_context_policy():
    env = _env(seed=20)
    call = PrimitiveCall(PrimitiveId.INSERT, np.zeros(4))
    res = dispatch(env, call, ExecContext(insert_policy=None))
    assert not res.success  # NotHolding precedes NoPolicy here
    env2 = _grasped_env(20, ExecContext())
    res2 = dispatch(env2, call, ExecContext(insert_policy=None))
    assert res2.failure_reason == "NoPolicy"
