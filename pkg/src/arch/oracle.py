"""Scripted oracle demonstrator: produces minimal-length primitive sequences
(Grasp, Move, Insert -- with a fixture Place detour for toppled objects) and
records them as behavior-cloning demonstrations. Recovery demonstrations
inject a guaranteed grasp slip on the first attempt so the dataset shows the
re-grasp behavior."""

from __future__ import annotations

import numpy as np

from .policy_high import (
    Demonstration,
    DemoStep,
    FAILURE_CEILING,
    HistoryWindow,
    MAX_PRIMITIVES,
    featurize_frame,
    pose_param,
)
from .primitives import ExecContext, PrimitiveCall, PrimitiveId, dispatch
from .workcell import Observation, Workcell

ORACLE_APPROACH_T = 0.010
ORACLE_APPROACH_YAW = np.deg2rad(5.0)


class OracleFailed(RuntimeError):
    """The scripted oracle could not produce the requested demonstrations --
    an upstream regression (planner, primitives, or insert policy)."""


def oracle_next_id(env: Workcell, obs: Observation) -> PrimitiveId:
    """Expert primitive choice from the current observation."""
    target = env.target
    spec = env.spec.object(target)
    if obs.attached is None:
        return PrimitiveId.GRASP
    if not obs.object_upright.get(target, True):
        return PrimitiveId.PLACE  # fixture reorientation detour
    est = obs.object_estimates[target]
    hole_q = obs.hole_q[f"hole_{target}"]
    lat = np.linalg.norm(est[:2] - hole_q[:2])
    if spec.symmetry > 0:
        period = 2 * np.pi / spec.symmetry
        yaw_err = abs((est[3] - hole_q[3] + period / 2) % period - period / 2)
    else:
        yaw_err = 0.0
    if lat > ORACLE_APPROACH_T or yaw_err > ORACLE_APPROACH_YAW:
        return PrimitiveId.MOVE
    return PrimitiveId.INSERT


def run_oracle_trial(env: Workcell, insert_policy,
                     ctx: ExecContext | None = None,
                     max_primitives: int = MAX_PRIMITIVES) -> dict:
    """One scripted trial; returns the same record shape as rollout_high."""
    ctx = ctx or ExecContext(insert_policy=insert_policy)
    ctx.insert_policy = insert_policy
    history = HistoryWindow()
    prev_id: int | None = None
    prev_success = False
    steps: list[DemoStep] = []
    outcomes: list[dict] = []
    grasped = False
    success = False
    consecutive_failures = 0

    for _ in range(max_primitives):
        obs = env.observe()
        history.push(featurize_frame(obs, env.target, env.geom.board_xy,
                                     prev_id, prev_success))
        pid = oracle_next_id(env, obs)
        call = PrimitiveCall(pid, pose_param(env, obs, pid))
        res = dispatch(env, call, ctx)
        steps.append(DemoStep(history.vector(), call, res.status))
        outcomes.append({"id": int(pid), "status": res.status,
                         "reason": res.failure_reason,
                         "steps_used": res.steps_used})
        if pid == PrimitiveId.GRASP and res.success:
            grasped = True
        prev_id, prev_success = int(pid), res.success
        if res.success:
            consecutive_failures = 0
        else:
            consecutive_failures += 1
            if consecutive_failures >= FAILURE_CEILING:
                break
        if env.check_inserted():
            success = True
            break

    return {
        "object": env.target,
        "success": success,
        "l": len(outcomes),
        "outcomes": outcomes,
        "grasped": grasped,
        "inserted": success or env.check_inserted(),
        "steps": steps,
    }


def collect_oracle(scene, insert_policy, n_success: int = 20,
                   n_recovery: int = 20, seed: int = 0,
                   target: str | None = None) -> list:
    """Deterministic demonstration set: ``n_success`` clean trials plus
    ``n_recovery`` trials whose first grasp is forced to slip (slip
    probability 1 until the first grasp attempt resolves)."""
    demos: list[Demonstration] = []
    ctx = ExecContext(insert_policy=insert_policy)
    trial = 0
    attempt = 0
    max_attempts = 10 * max(1, n_success + n_recovery)
    n_place = 20  # 4 grasp centers x 5 grasp angles
    while len(demos) < n_success + n_recovery:
        if attempt >= max_attempts:
            raise OracleFailed(
                f"collected {len(demos)}/{n_success + n_recovery} after "
                f"{attempt} attempts -- upstream regression")
        recovery = len(demos) >= n_success
        # stride-7 cycle of the spawn grid: any prefix of the dataset mixes
        # grasp centers and angles, and 20 demos cover every placement cell
        cell = (7 * len(demos)) % n_place
        env = Workcell(scene, seed=seed * 100_000 + attempt, target=target,
                       placement=(cell // 5, cell % 5),
                       slip_prob=1.0 if recovery else 0.0)
        attempt += 1
        if recovery:
            # slip applies only to the first grasp: drop the forcing as soon
            # as the gripper has closed once
            original = env.set_gripper

            def one_shot(closed, _env=env, _orig=original):
                _orig(closed)
                if closed:
                    _env.slip_prob = 0.0
                    _env.set_gripper = _orig

            env.set_gripper = one_shot
        record = run_oracle_trial(env, insert_policy, ctx)
        if not record["success"]:
            continue  # oracle demos are successful trials by construction
        if recovery and sum(o["id"] == 0 for o in record["outcomes"]) < 2:
            continue  # the slip did not surface; not a recovery example
        demos.append(Demonstration(trial, "recovery" if recovery else "successful",
                                   record["steps"]))
        trial += 1
    return demos
