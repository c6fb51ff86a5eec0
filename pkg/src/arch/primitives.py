"""Parameterized manipulation primitives: Grasp, Place, Move, Insert.

Each primitive plans (where needed), runs the simulator closed-loop under a
step budget, and reports a structured result. Primitives never raise for
in-band failures -- planning dead ends, missed grasps, and timeouts come back
as PrimitiveResult values the caller can react to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .planner import (
    NoPath,
    UNKNOWN,
    Roadmap,
    build_roadmap,
    config_distance,
    edge_free,
    lazy_query,
    scene_collision_fn,
    shortcut,
    state_collision_fn,
)
from .workcell import (
    ANG_LIMIT,
    DT,
    FTReading,
    LIN_LIMIT,
    VelocityCommand,
    Workcell,
    check_inserted,
)

MOVE_BUDGET = 5000  # sim steps: Move, Grasp, Place
INSERT_BUDGET = 1500
PRE_GRASP_HEIGHT = 0.050
PLACE_FORCE = 2.0  # N, descent stops on contact
GOAL_TOL_T = 1e-3
GOAL_TOL_YAW = np.deg2rad(1.0)
APPROACH_TOL_T = 0.020  # insert precondition envelope
APPROACH_TOL_YAW = np.deg2rad(10.0)
STALL_WINDOW = 200  # steps without progress before giving up


class PrimitiveId(IntEnum):
    GRASP = 0
    PLACE = 1
    MOVE = 2
    INSERT = 3


@dataclass(frozen=True)
class PrimitiveCall:
    id: PrimitiveId
    param: np.ndarray  # (x, y, z, yaw)

    def __post_init__(self):
        object.__setattr__(self, "id", PrimitiveId(self.id))
        object.__setattr__(self, "param", np.asarray(self.param, dtype=float))
        if self.param.shape != (4,):
            raise ValueError("param must be a 4-vector (x, y, z, yaw)")

    def to_json(self) -> dict:
        return {"id": int(self.id), "param": [float(v) for v in self.param]}

    @classmethod
    def from_json(cls, d: dict) -> "PrimitiveCall":
        return cls(PrimitiveId(int(d["id"])), np.asarray(d["param"], dtype=float))


@dataclass
class PrimitiveResult:
    status: str  # "success" | "failure"
    failure_reason: str | None = None
    steps_used: int = 0
    ft_trace: list | None = None

    def __post_init__(self):
        if self.status not in ("success", "failure"):
            raise ValueError(f"bad status {self.status!r}")
        if self.status == "failure" and not self.failure_reason:
            raise ValueError("failure requires a reason")
        if self.steps_used < 0:
            raise ValueError("steps_used must be >= 0")

    @property
    def success(self) -> bool:
        return self.status == "success"


def _ok(steps: int, trace=None) -> PrimitiveResult:
    return PrimitiveResult("success", None, steps, trace)


def _fail(reason: str, steps: int, trace=None) -> PrimitiveResult:
    return PrimitiveResult("failure", reason, steps, trace)


@dataclass
class ExecContext:
    """Shared execution resources: the trained insertion policy and cached
    roadmap structures keyed by the attached object's name."""

    insert_policy: object | None = None
    roadmaps: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# planning and path following


def _cached_roadmap(env: Workcell, ctx: ExecContext) -> Roadmap:
    """Roadmap structure for the current attachment (static-scene sampling);
    edge statuses are reset per use because resting objects move between
    primitive executions."""
    key = env.state.attached
    if key not in ctx.roadmaps:
        if key is None:
            section, height = None, None
        else:
            spec = env.spec.object(key)
            section, height = spec.section, spec.height
        cfn = scene_collision_fn(env.spec, section, height)
        ctx.roadmaps[key] = build_roadmap(env.spec, collision_fn=cfn)
    rm = ctx.roadmaps[key]
    return Roadmap(rm.nodes, dict.fromkeys(rm.edges, UNKNOWN),
                   [list(a) for a in rm.neighbors], rm.k_neighbors,
                   rm.bounds_lo, rm.bounds_hi)


def _plan(env: Workcell, ctx: ExecContext, goal) -> np.ndarray:
    """Waypoints from the current ee configuration to ``goal`` (may raise
    planner exceptions, which callers convert to failures)."""
    start = env.state.ee.copy()
    live = state_collision_fn(env.geom, env.state)
    if edge_free(start, goal, live):
        return np.stack([start, goal])
    path = lazy_query(_cached_roadmap(env, ctx), start, goal, live)
    path = shortcut(path, live)
    return path.waypoints


def _follow(env: Workcell, waypoints, budget: int, steps: int = 0,
            trace: list | None = None) -> tuple[int, bool]:
    """Proportional waypoint tracking; returns (steps, reached)."""
    for wp in waypoints:
        best = np.inf
        since_progress = 0
        while True:
            q = env.state.ee
            err = wp[:3] - q[:3]
            err_yaw = (wp[3] - q[3] + np.pi) % (2 * np.pi) - np.pi
            dist = np.linalg.norm(err) + 0.1 * abs(err_yaw)
            if np.linalg.norm(err) < GOAL_TOL_T and abs(err_yaw) < GOAL_TOL_YAW:
                break
            if steps >= budget:
                return steps, False
            if dist < best - 1e-6:
                best = dist
                since_progress = 0
            else:
                since_progress += 1
                if since_progress > STALL_WINDOW:
                    return steps, False
            cmd = VelocityCommand(np.clip(err / DT, -LIN_LIMIT, LIN_LIMIT),
                                  float(np.clip(err_yaw / DT, -ANG_LIMIT, ANG_LIMIT)))
            ft = env.step(cmd)
            if trace is not None:
                trace.append(ft)
            steps += 1
    return steps, True


def _descend(env: Workcell, target_z: float, budget: int, steps: int,
             stop_force: float | None = None,
             trace: list | None = None) -> tuple[int, bool]:
    """Straight-line descent; ends at target_z, on contact force, or when an
    obstruction stops downward progress (resting on something counts as
    having arrived for grasp/place choreography)."""
    blocked = 0
    while env.state.ee[2] > target_z + 1e-6:
        if steps >= budget:
            return steps, False
        z_before = env.state.ee[2]
        vz = max((target_z - env.state.ee[2]) / DT, -LIN_LIMIT)
        ft = env.step(VelocityCommand(np.array([0.0, 0.0, vz]), 0.0))
        if trace is not None:
            trace.append(ft)
        steps += 1
        if stop_force is not None and np.linalg.norm(ft.force) > stop_force:
            return steps, True
        if z_before - env.state.ee[2] < 1e-9:
            blocked += 1
            if blocked >= 5:
                return steps, True
        else:
            blocked = 0
    return steps, True


def _move_to(env: Workcell, ctx: ExecContext, goal, budget: int,
             steps: int = 0) -> tuple[int, str | None]:
    """Plan and follow; returns (steps, failure_reason or None)."""
    goal = np.asarray(goal, dtype=float)
    try:
        waypoints = _plan(env, ctx, goal)
    except NoPath:
        return steps, "NoPath"
    except ValueError as exc:  # StartInCollision / GoalInCollision / bounds
        return steps, type(exc).__name__
    steps, reached = _follow(env, waypoints, budget, steps)
    return steps, None if reached else "Stalled"


def _as_q(target) -> np.ndarray:
    """Accept a 4-vector or a Pose-like object with xyz+yaw."""
    if hasattr(target, "translation"):
        return np.array([*target.translation, target.yaw()])
    q = np.asarray(target, dtype=float)
    if q.shape != (4,):
        raise ValueError("target must be a 4-vector or Pose")
    return q


# ---------------------------------------------------------------------------
# primitives


def exec_move(env: Workcell, target, ctx: ExecContext | None = None) -> PrimitiveResult:
    """Plan a collision-free path to ``target`` and follow it to 1 mm / 1 deg."""
    ctx = ctx or ExecContext()
    goal = _as_q(target)
    start = env.state.ee
    err_yaw = (goal[3] - start[3] + np.pi) % (2 * np.pi) - np.pi
    if np.linalg.norm(goal[:3] - start[:3]) < GOAL_TOL_T and abs(err_yaw) < GOAL_TOL_YAW:
        return _ok(0)
    steps, reason = _move_to(env, ctx, goal, MOVE_BUDGET)
    return _ok(steps) if reason is None else _fail(reason, steps)


def exec_grasp(env: Workcell, pre_grasp, ctx: ExecContext | None = None) -> PrimitiveResult:
    """Move to the pre-grasp pose, descend straight down, close the gripper."""
    ctx = ctx or ExecContext()
    if env.state.attached is not None:
        return _fail("AlreadyHolding", 0)
    if env.state.gripper == "closed":
        env.set_gripper(False)
    goal = _as_q(pre_grasp)
    steps, reason = _move_to(env, ctx, goal, MOVE_BUDGET)
    if reason is not None:
        return _fail(reason, steps)
    steps, reached = _descend(env, goal[2] - PRE_GRASP_HEIGHT, MOVE_BUDGET, steps)
    if not reached:
        return _fail("Stalled", steps)
    env.set_gripper(True)
    if env.state.attached is None:
        env.set_gripper(False)
        return _fail("GraspMissed", steps)
    return _ok(steps)


def exec_place(env: Workcell, pre_place, ctx: ExecContext | None = None) -> PrimitiveResult:
    """Move to the pre-place pose, descend to contact, open the gripper."""
    ctx = ctx or ExecContext()
    if env.state.attached is None:
        return _fail("NotHolding", 0)
    goal = _as_q(pre_place)
    steps, reason = _move_to(env, ctx, goal, MOVE_BUDGET)
    if reason is not None:
        return _fail(reason, steps)
    steps, reached = _descend(env, goal[2] - PRE_GRASP_HEIGHT, MOVE_BUDGET, steps,
                              stop_force=PLACE_FORCE)
    if not reached:
        return _fail("Stalled", steps)
    env.set_gripper(False)
    if env.state.attached is not None:
        return _fail("StillHolding", steps)
    return _ok(steps)


def exec_insert(env: Workcell, policy, goal, ctx: ExecContext | None = None) -> PrimitiveResult:
    """Run the closed-loop insertion policy toward ``goal`` (hole pose)."""
    name = env.state.attached
    if name is None:
        return _fail("NotHolding", 0)
    if policy is None:
        return _fail("NoPolicy", 0)
    goal_q = _as_q(goal).copy()

    # snap the goal to the nearest hole cavity so the conditioning matches
    # training (goal z at the cavity floor); keep the caller's point if no
    # hole is anywhere near
    holes = env.geom.holes
    dists = [np.linalg.norm(goal_q[:2] - h.xy) for h in holes]
    hole = holes[int(np.argmin(dists))] if holes else None
    if hole is not None and min(dists) < 0.030:
        goal_q[:2] = hole.xy
        goal_q[2] = hole.bottom
        goal_q[3] = hole.yaw
    hole_name = f"hole_{name}" if f"hole_{name}" in env.geom.hole_by_name else (
        hole.name if hole is not None else None)
    if hole_name is None:
        return _fail("NoHole", 0)

    # pick the symmetry branch nearest the current object yaw
    sym = env.geom.obj_symmetry[name]
    obj_q = env.state.object_q[name]
    if sym == 0:
        goal_q[3] = obj_q[3]
    elif sym > 1:
        period = 2 * np.pi / sym
        goal_q[3] += period * np.round((obj_q[3] - goal_q[3]) / period)

    # approach-region precondition (the policy's trained envelope)
    err_yaw = (obj_q[3] - goal_q[3] + np.pi) % (2 * np.pi) - np.pi
    if (np.linalg.norm(obj_q[:2] - goal_q[:2]) > APPROACH_TOL_T
            or abs(err_yaw) > APPROACH_TOL_YAW):
        return _fail("OutsideApproach", 0)

    inserted_z = (hole.top - hole.depth + 1e-3) if hole is not None else -np.inf
    trace: list[FTReading] = []
    ft = np.zeros(6)
    for step_i in range(INSERT_BUDGET):
        q = env.state.object_q[name]
        if q[2] <= inserted_z and hole_name is not None and check_inserted(
                env.geom, env.state, name, hole_name):
            return _ok(step_i, trace)
        obs = np.array([q[0] - goal_q[0], q[1] - goal_q[1], q[2] - goal_q[2],
                        (q[3] - goal_q[3] + np.pi) % (2 * np.pi) - np.pi,
                        *ft])
        reading = env.step(policy.command(obs))
        ft = reading.as_vector()
        trace.append(reading)
    q = env.state.object_q[name]
    if q[2] <= inserted_z and hole_name is not None and check_inserted(
            env.geom, env.state, name, hole_name):
        return _ok(INSERT_BUDGET, trace)
    return _fail("InsertTimeout", INSERT_BUDGET, trace)


def dispatch(env: Workcell, call: PrimitiveCall,
             ctx: ExecContext | None = None) -> PrimitiveResult:
    """Route a primitive call to its executor."""
    ctx = ctx or ExecContext()
    if call.id == PrimitiveId.GRASP:
        return exec_grasp(env, call.param, ctx)
    if call.id == PrimitiveId.PLACE:
        return exec_place(env, call.param, ctx)
    if call.id == PrimitiveId.MOVE:
        return exec_move(env, call.param, ctx)
    return exec_insert(env, ctx.insert_policy, call.param, ctx)
