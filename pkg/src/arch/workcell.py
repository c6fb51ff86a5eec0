"""Deterministic quasi-static workcell simulator.

A free-flying velocity-controlled end-effector with a parallel gripper moves
over a table carrying an insertion board and a regrasp fixture. Contact is
penalty-based and quasi-static: motion that would interpenetrate a surface is
projected onto the contact-free subspace and the blocked displacement is
reported as a force-torque reading. States are immutable values; stepping
produces a new state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CrossSection, Pose, _points_in_polygon, section_collides
from .rng import RngStream
from .scenes import InfeasibleSpec, SceneSpec, UnknownHole, UnknownObject

DT = 0.008  # 125 Hz control
K_PENALTY = 5000.0  # N per meter of blocked displacement
K_ROT_PENALTY = 50.0  # N*m per radian of blocked rotation
LIN_LIMIT = 0.05  # m/s
ANG_LIMIT = 0.5  # rad/s
MAX_HORIZON = 25_000
EE_RADIUS = 0.012
EE_HEIGHT = 0.020
GRASP_LAT_TOL = 0.008
GRASP_YAW_TOL = np.deg2rad(10.0)
GRASP_Z_TOL = 0.010
FIXTURE_TOL = 0.020


class HorizonExceeded(RuntimeError):
    """Episode ran past the maximum task horizon."""


@dataclass(frozen=True)
class FTReading:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float))
        object.__setattr__(self, "torque", np.asarray(self.torque, dtype=float))

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.force, self.torque])

    @property
    def in_contact(self) -> bool:
        return bool(np.any(self.force != 0) or np.any(self.torque != 0))


@dataclass(frozen=True)
class VelocityCommand:
    linear: np.ndarray
    angular_z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))

    def clipped(self) -> "VelocityCommand":
        return VelocityCommand(
            np.clip(self.linear, -LIN_LIMIT, LIN_LIMIT),
            float(np.clip(self.angular_z, -ANG_LIMIT, ANG_LIMIT)),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Observation/pose-estimate noise knobs. Zero everywhere by default."""

    init_translation_sigma: float = 0.0  # m, per xy axis on pose estimates
    init_rotation_sigma: float = 0.0  # rad, yaw on pose estimates
    cloud_noise_sigma: float = 0.0  # m, per-point depth noise
    dropout_fraction: float = 0.0
    ft_sigma: float = 0.0  # N, sensor noise on force components

    def __post_init__(self):
        if not (0.0 <= self.dropout_fraction < 1.0):
            raise ValueError("dropout_fraction must be in [0, 1)")
        for v in (self.init_translation_sigma, self.init_rotation_sigma, self.cloud_noise_sigma, self.ft_sigma):
            if v < 0:
                raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class WorkcellState:
    """Ground truth: poses are (x, y, z, yaw); object z is the bottom face."""

    ee: np.ndarray
    gripper: str  # "open" | "closed"
    attached: str | None
    attached_rel: np.ndarray | None  # object pose relative to ee, (dx,dy,dz,dyaw)
    object_q: dict  # name -> (x, y, z, yaw)
    object_upright: dict  # name -> bool
    time: float = 0.0
    step_count: int = 0

    def ee_pose(self) -> Pose:
        return Pose.from_xyz_yaw(*self.ee)

    def object_pose(self, name: str) -> Pose:
        if name not in self.object_q:
            raise UnknownObject(name)
        return Pose.from_xyz_yaw(*self.object_q[name])

    def to_json(self) -> dict:
        return {
            "ee": list(map(float, self.ee)),
            "gripper": self.gripper,
            "attached": self.attached,
            "attached_rel": None if self.attached_rel is None else list(map(float, self.attached_rel)),
            "object_q": {k: list(map(float, v)) for k, v in sorted(self.object_q.items())},
            "object_upright": {k: bool(v) for k, v in sorted(self.object_upright.items())},
            "time": self.time,
            "step_count": self.step_count,
        }

    @classmethod
    def from_json(cls, d) -> "WorkcellState":
        return cls(
            np.array(d["ee"]),
            d["gripper"],
            d["attached"],
            None if d["attached_rel"] is None else np.array(d["attached_rel"]),
            {k: np.array(v) for k, v in d["object_q"].items()},
            dict(d["object_upright"]),
            d["time"],
            d["step_count"],
        )


@dataclass(frozen=True)
class Observation:
    """What policies see: exact proprioception, (possibly noisy) object poses."""

    ee: np.ndarray
    gripper: str
    attached: str | None
    object_estimates: dict  # name -> (x, y, z, yaw)
    object_upright: dict
    hole_q: dict  # name -> (x, y, z, yaw), known board geometry
    fixture_q: np.ndarray
    time: float


# ---------------------------------------------------------------------------
# compiled scene geometry


class _Region:
    """World-frame footprint supporting a vectorized membership test.

    Polygon edges are precomputed so the per-query cost is a single
    broadcast ray cast with no temporaries beyond the hit matrix.
    """

    def __init__(self, section: CrossSection, xy, yaw):
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s], [s, c]])
        self.polys = []
        self.circles = []
        self.rects = []
        for prim in section.primitives():
            if prim.kind == "circle":
                center = R @ prim.center + xy
                self.circles.append((float(center[0]), float(center[1]), prim.radius**2))
            else:
                verts = prim.vertices @ R.T + xy
                xs = np.unique(np.round(verts[:, 0], 12))
                ys = np.unique(np.round(verts[:, 1], 12))
                if len(verts) == 4 and len(xs) == 2 and len(ys) == 2:
                    self.rects.append((xs[0], xs[1], ys[0], ys[1]))
                    continue
                xi = verts[:, 0][None, :]
                yi = verts[:, 1][None, :]
                xj = np.roll(verts[:, 0], 1)[None, :]
                yj = np.roll(verts[:, 1], 1)[None, :]
                with np.errstate(divide="ignore", invalid="ignore"):
                    slope = (xj - xi) / (yj - yi)
                self.polys.append((xi, yi, yj, slope))

    def contains(self, points: np.ndarray) -> np.ndarray:
        inside = np.zeros(len(points), dtype=bool)
        x = points[:, 0:1]
        y = points[:, 1:2]
        for cx, cy, r2 in self.circles:
            inside |= ((points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2) <= r2
        for x0, x1, y0, y1 in self.rects:
            inside |= (
                (points[:, 0] >= x0) & (points[:, 0] <= x1) & (points[:, 1] >= y0) & (points[:, 1] <= y1)
            )
        for xi, yi, yj, slope in self.polys:
            crosses = (yi > y) != (yj > y)
            xcross = xi + (y - yi) * slope
            hits = crosses & (x < xcross)
            inside |= (hits.sum(axis=1) & 1).astype(bool)
        return inside

    def contains_all(self, points: np.ndarray) -> bool:
        return bool(np.all(self.contains(points)))

    def contains_any(self, points: np.ndarray) -> bool:
        return bool(np.any(self.contains(points)))


class _Hole:
    def __init__(self, spec_hole):
        self.name = spec_hole.name
        self.xy = spec_hole.pose.translation[:2]
        self.top = float(spec_hole.pose.translation[2])
        self.bottom = self.top - spec_hole.depth
        self.depth = spec_hole.depth
        self.yaw = spec_hole.pose.yaw()
        self.region = _Region(spec_hole.section, self.xy, self.yaw)
        self.bounding = spec_hole.section.bounding_radius()


_EE_CIRCLE_PTS = EE_RADIUS * np.stack(
    [np.cos(2 * np.pi * np.arange(12) / 12), np.sin(2 * np.pi * np.arange(12) / 12)], axis=1
)


class SceneGeometry:
    """Per-scene precomputation for the contact model."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.table = spec.table_height
        self.board_top = spec.board_top
        self.board_region = _Region(spec.board_section, spec.board_pose.translation[:2], spec.board_pose.yaw())
        self.board_xy = spec.board_pose.translation[:2]
        self.board_bounding = spec.board_section.bounding_radius()
        self.holes = [_Hole(h) for h in spec.holes]
        self.hole_by_name = {h.name: h for h in self.holes}
        self.obj_boundary = {o.name: o.section.boundary_points(per_edge=2) for o in spec.objects}
        self.obj_bounding = {o.name: o.section.bounding_radius() for o in spec.objects}
        self.obj_height = {o.name: o.height for o in spec.objects}
        self.obj_section = {o.name: o.section for o in spec.objects}
        self.obj_symmetry = {o.name: o.symmetry for o in spec.objects}
        self.fixture_xy = spec.fixture_pose.translation[:2]
        self.fixture_yaw = spec.fixture_pose.yaw()
        self.lo = np.asarray(spec.bounds_lo, dtype=float)
        self.hi = np.asarray(spec.bounds_hi, dtype=float)
        self.max_obj_top = max(o.height for o in spec.objects)
        self._rcache: dict = {}

    def object_region(self, name, q) -> "_Region":
        key = (name, float(q[0]), float(q[1]), float(q[3]))
        region = self._rcache.get(key)
        if region is None:
            if len(self._rcache) > 256:
                self._rcache.clear()
            region = _Region(self.obj_section[name], q[:2], q[3])
            self._rcache[key] = region
        return region

    def footprint(self, name: str, xy, yaw) -> np.ndarray:
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s], [s, c]])
        return self.obj_boundary[name] @ R.T + xy

    def ee_footprint(self, xy) -> np.ndarray:
        return _EE_CIRCLE_PTS + xy

    def hole_fully_containing(self, pts: np.ndarray, xy, bounding: float):
        x, y = float(xy[0]), float(xy[1])
        for hole in self.holes:
            if math.hypot(hole.xy[0] - x, hole.xy[1] - y) > hole.bounding + bounding:
                continue
            if hole.region.contains_all(pts):
                return hole
        return None

    def over_board(self, pts: np.ndarray, xy, bounding: float) -> bool:
        if math.hypot(self.board_xy[0] - float(xy[0]), self.board_xy[1] - float(xy[1])) > self.board_bounding + bounding:
            return False
        return self.board_region.contains_any(pts)


def yaw_error(delta: float, symmetry: int) -> float:
    """Smallest |yaw error| modulo the object's rotational symmetry group."""
    if symmetry == 0:
        return 0.0
    period = 2 * np.pi / max(symmetry, 1)
    folded = (delta + period / 2) % period - period / 2
    return abs(float(folded))


# ---------------------------------------------------------------------------
# contact resolution


def _bodies(geom: SceneGeometry, state_ee, attached, attached_rel):
    """Moving bodies as (kind, name, xy, yaw, z_bottom, height, pts)."""
    out = []
    ex, ey, ez, eyaw = state_ee
    if attached is not None:
        ox = ex + attached_rel[0]
        oy = ey + attached_rel[1]
        oz = ez + attached_rel[2]
        oyaw = eyaw + attached_rel[3]
        xy = np.array([ox, oy])
        out.append(("object", attached, xy, oyaw, oz, None))
    out.append(("ee", None, np.array([ex, ey]), eyaw, ez, None))
    return out


def _lateral_ok(geom: SceneGeometry, state: WorkcellState, ee_q) -> bool:
    """All moving bodies admissible at the candidate ee configuration."""
    ex, ey, ez, eyaw = ee_q
    checks = []
    if state.attached is not None:
        rel = state.attached_rel
        xy = np.array([ex + rel[0], ey + rel[1]])
        z = ez + rel[2]
        name = state.attached
        pts = geom.footprint(name, xy, eyaw + rel[3])
        checks.append((name, xy, z, geom.obj_height[name], geom.obj_bounding[name], pts))
    checks.append(("__ee__", np.array([ex, ey]), ez, EE_HEIGHT, EE_RADIUS, geom.ee_footprint(np.array([ex, ey]))))

    for name, xy, z, height, bounding, pts in checks:
        # below the board top the footprint must sit wholly inside one hole,
        # unless the body is off the board entirely (e.g. on the table)
        if z < geom.board_top - 1e-9:
            if geom.over_board(pts, xy, bounding):
                hole = geom.hole_fully_containing(pts, xy, bounding)
                if hole is None or z < hole.bottom - 1e-9:
                    return False
        # resting objects block lateral motion when height ranges overlap
        for other, oq in state.object_q.items():
            if other == state.attached or (name == other):
                continue
            oh = geom.obj_height[other]
            if not (z < oq[2] + oh - 1e-9 and z + height > oq[2] + 1e-9):
                continue
            if math.hypot(xy[0] - oq[0], xy[1] - oq[1]) > bounding + geom.obj_bounding[other] + 1e-9:
                continue
            region = geom.object_region(other, oq)
            if region.contains_any(pts):
                return False
            # reverse direction: other's boundary inside the moving footprint
            opts = geom.footprint(other, oq[:2], oq[3])
            if name == "__ee__":
                if np.any(np.linalg.norm(opts - xy, axis=1) <= EE_RADIUS):
                    return False
            elif _region_contains(geom, name, xy, ee_q[3] + state.attached_rel[3], opts):
                return False
    return True


def _region_contains(geom, name, xy, yaw, world_pts) -> bool:
    c, s = np.cos(-yaw), np.sin(-yaw)
    R = np.array([[c, -s], [s, c]])
    local = (world_pts - xy) @ R.T
    return bool(np.any(geom.obj_section[name].contains_points(local)))


def _floor_for(geom: SceneGeometry, state: WorkcellState, name, xy, yaw, bounding, pts) -> float:
    """Highest surface under a body footprint at (xy, yaw)."""
    floor = geom.table
    if geom.over_board(pts, xy, bounding):
        hole = geom.hole_fully_containing(pts, xy, bounding)
        floor = hole.bottom if hole is not None else geom.board_top
    for other, oq in state.object_q.items():
        if other == state.attached or other == name:
            continue
        top = oq[2] + geom.obj_height[other]
        if top <= floor:
            continue
        if math.hypot(xy[0] - oq[0], xy[1] - oq[1]) > bounding + geom.obj_bounding[other]:
            continue
        region = geom.object_region(other, oq)
        if region.contains_any(pts):
            floor = top
        elif name is not None and _region_contains(geom, name, xy, yaw, geom.footprint(other, oq[:2], oq[3])):
            floor = top
        elif name is None and np.any(
            np.linalg.norm(geom.footprint(other, oq[:2], oq[3]) - xy, axis=1) <= EE_RADIUS
        ):
            floor = top
    return floor


def _feasible_fraction(pred, lo=0.0, hi=1.0, iters=9) -> float:
    """Largest s in [0,1] with pred(s) true, given pred(0) true."""
    if pred(hi):
        return hi
    if not pred(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _clearly_free(geom: SceneGeometry, state: WorkcellState, ee, margin: float) -> bool:
    """Conservative test that no contact can occur within this step."""
    bodies = [(float(ee[0]), float(ee[1]), float(ee[2]), EE_RADIUS)]
    if state.attached is not None:
        rel = state.attached_rel
        name = state.attached
        bodies.append(
            (float(ee[0] + rel[0]), float(ee[1] + rel[1]), float(ee[2] + rel[2]), geom.obj_bounding[name])
        )
    bx, by = float(geom.board_xy[0]), float(geom.board_xy[1])
    for x, y, z, bounding in bodies:
        if z - margin <= geom.table:
            return False
        if z - margin <= geom.board_top and math.hypot(x - bx, y - by) <= geom.board_bounding + bounding + margin:
            return False
        for other, oq in state.object_q.items():
            if other == state.attached:
                continue
            if z - margin <= oq[2] + geom.obj_height[other] and math.hypot(
                x - float(oq[0]), y - float(oq[1])
            ) <= bounding + geom.obj_bounding[other] + margin:
                return False
    return True




def _grid_prefix(feasible: np.ndarray) -> int:
    """Length of the feasible prefix (walls are not jumped over)."""
    bad = np.flatnonzero(~feasible)
    return int(bad[0]) if len(bad) else len(feasible)


def _fast_peg_shift(geom: SceneGeometry, state: WorkcellState, ee, d_xy) -> float | None:
    """Vectorized max-feasible lateral fraction when the attached peg inside a
    hole is the only active constraint. Returns None when inapplicable."""
    if state.attached is None:
        return None
    rel = state.attached_rel
    pz = ee[2] + rel[2]
    if not (pz < geom.board_top - 1e-9):
        return None
    if ee[2] < geom.board_top - 1e-9:
        return None
    name = state.attached
    px, py = float(ee[0] + rel[0]), float(ee[1] + rel[1])
    step_len = math.hypot(float(d_xy[0]), float(d_xy[1]))
    reach = geom.obj_bounding[name] + step_len + EE_RADIUS + 1e-6
    for other, oq in state.object_q.items():
        if other == name:
            continue
        if math.hypot(px - float(oq[0]), py - float(oq[1])) <= reach + geom.obj_bounding[other]:
            return None
    holes = [
        h
        for h in geom.holes
        if math.hypot(h.xy[0] - px, h.xy[1] - py) <= h.bounding + geom.obj_bounding[name] + step_len
        and pz >= h.bottom - 1e-9
    ]
    if not holes:
        return 0.0 if geom.over_board(geom.footprint(name, np.array([px, py]), ee[3] + rel[3]), np.array([px, py]), geom.obj_bounding[name]) else 1.0
    base = geom.footprint(name, np.array([px, py]), ee[3] + rel[3])
    lo, span = 0.0, 1.0
    for _ in range(2):
        s_grid = lo + span * np.arange(1, 9) / 8.0
        offsets = s_grid[:, None, None] * np.asarray(d_xy)[None, None, :]
        pts = (base[None, :, :] + offsets).reshape(-1, 2)
        ok = np.zeros(8, dtype=bool)
        for hole in holes:
            ok |= hole.region.contains(pts).reshape(8, -1).all(axis=1)
        k = _grid_prefix(ok)
        if k == 8:
            return float(s_grid[-1]) if span == 1.0 and lo == 0.0 else float(s_grid[-1])
        hi_edge = lo + span * k / 8.0
        lo, span = hi_edge - span / 8.0 if k > 0 else lo, span / 8.0
        lo = max(lo, 0.0)
    return float(lo + span * 0.0) if k == 0 else float(hi_edge)


def _fast_peg_yaw(geom: SceneGeometry, state: WorkcellState, ee, d_yaw) -> float | None:
    """Vectorized max-feasible yaw fraction for the in-hole attached peg."""
    if state.attached is None:
        return None
    rel = state.attached_rel
    pz = ee[2] + rel[2]
    if not (pz < geom.board_top - 1e-9) or ee[2] < geom.board_top - 1e-9:
        return None
    name = state.attached
    px, py = float(ee[0] + rel[0]), float(ee[1] + rel[1])
    for other, oq in state.object_q.items():
        if other == name:
            continue
        if math.hypot(px - float(oq[0]), py - float(oq[1])) <= geom.obj_bounding[name] + geom.obj_bounding[other] + EE_RADIUS + 1e-6:
            return None
    holes = [
        h
        for h in geom.holes
        if math.hypot(h.xy[0] - px, h.xy[1] - py) <= h.bounding + geom.obj_bounding[name]
        and pz >= h.bottom - 1e-9
    ]
    if not holes:
        return None
    local = geom.obj_boundary[name]
    lx, ly = local[:, 0][None, :], local[:, 1][None, :]
    yaw0 = ee[3] + rel[3]

    def footprints(s_grid):
        yaws = yaw0 + s_grid * d_yaw
        c, sn = np.cos(yaws)[:, None], np.sin(yaws)[:, None]
        pts = np.empty((len(s_grid) * local.shape[0], 2))
        pts[:, 0] = (lx * c - ly * sn + px).ravel()
        pts[:, 1] = (lx * sn + ly * c + py).ravel()
        return pts

    lo, span = 0.0, 1.0
    for _ in range(2):
        s_grid = lo + span * np.arange(1, 9) / 8.0
        pts = footprints(s_grid)
        ok = np.zeros(8, dtype=bool)
        for hole in holes:
            ok |= hole.region.contains(pts).reshape(8, -1).all(axis=1)
        k = _grid_prefix(ok)
        if k == 8:
            return float(s_grid[-1])
        hi_edge = lo + span * k / 8.0
        lo, span = (hi_edge - span / 8.0 if k > 0 else lo), span / 8.0
        lo = max(lo, 0.0)
    return float(hi_edge)


def step(geom: SceneGeometry, state: WorkcellState, cmd: VelocityCommand, dt: float = DT,
         noise: NoiseSpec | None = None, rng: RngStream | None = None):
    """Advance one control period; returns (new_state, ft_reading)."""
    if state.step_count >= MAX_HORIZON:
        raise HorizonExceeded(f"horizon of {MAX_HORIZON} steps exhausted")
    cmd = cmd.clipped()
    d = np.zeros(4)
    d[:3] = cmd.linear * dt
    d[3] = cmd.angular_z * dt

    ee = state.ee.copy()

    margin = float(np.max(np.abs(d[:3]))) + 1e-9
    if _clearly_free(geom, state, ee, margin):
        ee[:3] += d[:3]
        ee[3] += d[3]
        ee[:3] = np.clip(ee[:3], geom.lo[:3], geom.hi[:3])
        ee[3] = (ee[3] + np.pi) % (2 * np.pi) - np.pi
        object_q = state.object_q
        if state.attached is not None:
            rel = state.attached_rel
            object_q = dict(object_q)
            object_q[state.attached] = np.array(
                [ee[0] + rel[0], ee[1] + rel[1], ee[2] + rel[2], ee[3] + rel[3]]
            )
        ft = FTReading.zero()
        if noise is not None and noise.ft_sigma > 0 and rng is not None:
            g = rng.draw("ft_noise")
            ft = FTReading(g.normal(0.0, noise.ft_sigma, size=3), g.normal(0.0, noise.ft_sigma * 0.05, size=3))
        return (
            replace(state, ee=ee, object_q=object_q, time=state.time + dt, step_count=state.step_count + 1),
            ft,
        )

    # lateral (x, y) projection at the current height
    d_xy = d[:2]
    if np.any(d_xy):
        s_fast = _fast_peg_shift(geom, state, ee, d_xy)
        def lat_ok(s):
            q = ee.copy()
            q[0] += s * d_xy[0]
            q[1] += s * d_xy[1]
            return _lateral_ok(geom, state, q)

        s_lat = s_fast if s_fast is not None else _feasible_fraction(lat_ok)
        ee[0] += s_lat * d_xy[0]
        ee[1] += s_lat * d_xy[1]
    else:
        s_lat = 1.0

    # vertical projection at the accepted (x, y)
    z_cand = ee[2] + d[2]
    if d[2] < 0:
        floors = []
        if state.attached is not None:
            rel = state.attached_rel
            xy = np.array([ee[0] + rel[0], ee[1] + rel[1]])
            name = state.attached
            pts = geom.footprint(name, xy, ee[3] + rel[3])
            f = _floor_for(geom, state, name, xy, ee[3] + rel[3], geom.obj_bounding[name], pts)
            floors.append(f - rel[2])
        xy_ee = ee[:2]
        floors.append(_floor_for(geom, state, None, xy_ee, ee[3], EE_RADIUS, geom.ee_footprint(xy_ee)))
        floor = max(floors)
        # a floor never pushes a body upward; it only stops descent
        new_z = max(z_cand, min(floor, ee[2]))
    else:
        new_z = z_cand
    blocked_z = z_cand - new_z
    ee[2] = new_z

    # yaw projection
    if d[3] != 0.0:
        s_yfast = _fast_peg_yaw(geom, state, ee, d[3])
        def yaw_ok(s):
            q = ee.copy()
            q[3] = ee[3] + s * d[3]
            return _lateral_ok(geom, state, q)

        s_yaw = s_yfast if s_yfast is not None else _feasible_fraction(yaw_ok)
        ee[3] += s_yaw * d[3]
    else:
        s_yaw = 1.0

    # workspace bounds act as rigid walls (no force reported)
    ee[:3] = np.clip(ee[:3], geom.lo[:3], geom.hi[:3])
    ee[3] = (ee[3] + np.pi) % (2 * np.pi) - np.pi

    blocked = np.array([(1 - s_lat) * d_xy[0], (1 - s_lat) * d_xy[1], blocked_z])
    blocked_yaw = (1 - s_yaw) * d[3]
    force = -K_PENALTY * blocked
    torque = np.array([0.0, 0.0, -K_ROT_PENALTY * blocked_yaw])
    if state.attached is not None and np.any(force):
        rel = state.attached_rel
        r = np.array([rel[0], rel[1], rel[2]])
        torque = torque + np.array([
            r[1] * force[2] - r[2] * force[1],
            r[2] * force[0] - r[0] * force[2],
            r[0] * force[1] - r[1] * force[0],
        ])
    if noise is not None and noise.ft_sigma > 0 and rng is not None:
        g = rng.draw("ft_noise")
        force = force + g.normal(0.0, noise.ft_sigma, size=3)
        torque = torque + g.normal(0.0, noise.ft_sigma * 0.05, size=3)

    object_q = dict(state.object_q)
    if state.attached is not None:
        rel = state.attached_rel
        object_q[state.attached] = np.array([ee[0] + rel[0], ee[1] + rel[1], ee[2] + rel[2], ee[3] + rel[3]])

    new_state = replace(
        state,
        ee=ee,
        object_q=object_q,
        time=state.time + dt,
        step_count=state.step_count + 1,
    )
    return new_state, FTReading(force, torque)


# ---------------------------------------------------------------------------
# gripper, spawn, queries


def set_gripper(geom: SceneGeometry, state: WorkcellState, closed: bool,
                rng: RngStream | None = None, slip_prob: float = 0.0) -> WorkcellState:
    """Open or close the gripper; closing may attach, opening settles the object."""
    if closed:
        if state.attached is not None or state.gripper == "closed":
            return replace(state, gripper="closed")
        best = None
        for obj in geom.spec.objects:
            q = state.object_q[obj.name]
            lat = np.linalg.norm(state.ee[:2] - q[:2])
            if lat > GRASP_LAT_TOL:
                continue
            if abs(state.ee[2] - (q[2] + obj.height)) > GRASP_Z_TOL:
                continue
            if yaw_error(state.ee[3] - q[3], obj.symmetry) > GRASP_YAW_TOL:
                continue
            if best is None or lat < best[1]:
                best = (obj.name, lat)
        if best is None:
            return replace(state, gripper="closed")
        if slip_prob > 0.0 and rng is not None and rng.draw("grasp_slip").random() < slip_prob:
            return replace(state, gripper="closed")
        name = best[0]
        q = state.object_q[name]
        rel = np.array([q[0] - state.ee[0], q[1] - state.ee[1], q[2] - state.ee[2], q[3] - state.ee[3]])
        return replace(state, gripper="closed", attached=name, attached_rel=rel)

    # opening
    if state.attached is None:
        return replace(state, gripper="open")
    name = state.attached
    q = state.object_q[name].copy()
    upright = dict(state.object_upright)

    if np.linalg.norm(q[:2] - geom.fixture_xy) <= FIXTURE_TOL:
        # fixture slot canonicalizes the object: upright at the slot pose
        q = np.array([geom.fixture_xy[0], geom.fixture_xy[1], geom.table, geom.fixture_yaw])
        upright[name] = True
    else:
        pts = geom.footprint(name, q[:2], q[3])
        bounding = geom.obj_bounding[name]
        hole = geom.hole_fully_containing(pts, q[:2], bounding)
        if hole is not None and q[2] < hole.top - 1e-9:
            q[2] = hole.bottom  # settles the rest of the way in
        else:
            detached = replace(state, attached=None, attached_rel=None)
            q[2] = _floor_for(geom, detached, name, q[:2], q[3], bounding, pts)
    object_q = dict(state.object_q)
    object_q[name] = q
    return replace(state, gripper="open", attached=None, attached_rel=None,
                   object_q=object_q, object_upright=upright)


def check_inserted(geom: SceneGeometry, state: WorkcellState, object_name: str, hole_name: str,
                   depth_tol: float = 1e-3) -> bool:
    """Fully inserted: upright, bottom at the cavity floor, footprint inside."""
    if object_name not in geom.obj_section:
        raise UnknownObject(object_name)
    if hole_name not in geom.hole_by_name:
        raise UnknownHole(hole_name)
    if not state.object_upright.get(object_name, True):
        return False
    hole = geom.hole_by_name[hole_name]
    q = state.object_q[object_name]
    if q[2] > hole.top - hole.depth + depth_tol:
        return False
    pts = geom.footprint(object_name, q[:2], q[3])
    return hole.region.contains_all(pts)


def spawn(spec: SceneSpec, seed: int, target: str | None = None,
          placement: tuple[int, int] | None = None) -> tuple[WorkcellState, RngStream]:
    """Initial state with the target object placed on the randomization grid."""
    geom = SceneGeometry(spec)
    rng = RngStream(seed)
    target = target or spec.objects[0].name
    tspec = spec.object(target)

    if placement is None:
        ci = int(rng.draw("spawn_center").integers(len(spec.grasp_centers)))
        ai = int(rng.draw("spawn_angle").integers(len(spec.grasp_angles)))
    else:
        ci, ai = placement
    cx, cy = spec.grasp_centers[ci]
    yaw0 = spec.grasp_angles[ai]

    others = [o for o in spec.objects if o.name != target]
    for _ in range(100):
        g = rng.draw("spawn_jitter")
        jx, jy = g.uniform(-spec.jitter_xy, spec.jitter_xy, size=2)
        jyaw = g.uniform(-spec.jitter_yaw, spec.jitter_yaw)
        pose = np.array([cx + jx, cy + jy, spec.table_height, yaw0 + jyaw])
        target_pose = Pose.from_xyz_yaw(*pose)
        clash = any(
            section_collides(tspec.section, target_pose, o.section, o.init_pose) for o in others
        )
        if not clash:
            object_q = {o.name: np.array([*o.init_pose.translation[:2], spec.table_height, o.init_pose.yaw()]) for o in others}
            object_q[target] = pose
            upright = {o.name: o.upright for o in spec.objects}
            ee = np.array([0.0, 0.0, float(spec.bounds_hi[2]) - 0.05, 0.0])
            return (
                WorkcellState(ee, "open", None, None, object_q, upright),
                rng,
            )
    raise InfeasibleSpec("could not place target without collision in 100 attempts")


def observe(geom: SceneGeometry, state: WorkcellState, noise: NoiseSpec | None = None,
            rng: RngStream | None = None,
            pose_overrides: dict | None = None) -> Observation:
    """Sensor view: exact proprioception, perturbed object pose estimates."""
    estimates = {}
    for name, q in state.object_q.items():
        est = q.copy()
        if pose_overrides and name in pose_overrides:
            est = np.asarray(pose_overrides[name], dtype=float).copy()
        elif noise is not None and rng is not None and (
            noise.init_translation_sigma > 0 or noise.init_rotation_sigma > 0
        ):
            g = rng.draw(f"obs_{name}")
            est[0] += g.normal(0.0, noise.init_translation_sigma)
            est[1] += g.normal(0.0, noise.init_translation_sigma)
            est[3] += g.normal(0.0, noise.init_rotation_sigma)
        estimates[name] = est
    hole_q = {
        h.name: np.array([h.xy[0], h.xy[1], h.top, h.yaw]) for h in geom.holes
    }
    return Observation(
        ee=state.ee.copy(),
        gripper=state.gripper,
        attached=state.attached,
        object_estimates=estimates,
        object_upright=dict(state.object_upright),
        hole_q=hole_q,
        fixture_q=np.array([geom.fixture_xy[0], geom.fixture_xy[1], geom.table, geom.fixture_yaw]),
        time=state.time,
    )


def check_no_interpenetration(geom: SceneGeometry, state: WorkcellState, tol: float = 1e-6) -> bool:
    """Post-step assertion: moving bodies do not overlap solid geometry."""
    checks = []
    if state.attached is not None:
        name = state.attached
        q = state.object_q[name]
        checks.append((name, q[:2], q[3], q[2], geom.obj_bounding[name]))
    checks.append((None, state.ee[:2], state.ee[3], state.ee[2], EE_RADIUS))
    for name, xy, yaw, z, bounding in checks:
        pts = geom.footprint(name, xy, yaw) if name else geom.ee_footprint(xy)
        if z < geom.table - tol:
            return False
        if z < geom.board_top - tol and geom.over_board(pts, xy, bounding):
            hole = geom.hole_fully_containing(pts, xy, bounding)
            if hole is None or z < hole.bottom - tol:
                return False
    return True


# ---------------------------------------------------------------------------
# convenience environment wrapper


class Workcell:
    """Mutable single-owner wrapper used by primitive executors."""

    def __init__(self, spec: SceneSpec, seed: int = 0, noise: NoiseSpec | None = None,
                 slip_prob: float = 0.0, target: str | None = None,
                 placement: tuple[int, int] | None = None):
        self.spec = spec
        self.geom = SceneGeometry(spec)
        self.noise = noise
        self.slip_prob = slip_prob
        self.target = target or spec.objects[0].name
        self.state, self.rng = spawn(spec, seed, target=self.target, placement=placement)
        self.last_ft = FTReading.zero()

    def step(self, cmd: VelocityCommand, dt: float = DT) -> FTReading:
        self.state, ft = step(self.geom, self.state, cmd, dt, self.noise, self.rng)
        self.last_ft = ft
        return ft

    def set_gripper(self, closed: bool):
        self.state = set_gripper(self.geom, self.state, closed, self.rng, self.slip_prob)

    def observe(self, pose_overrides: dict | None = None) -> Observation:
        return observe(self.geom, self.state, self.noise, self.rng, pose_overrides)

    def check_inserted(self, object_name: str | None = None, hole_name: str | None = None) -> bool:
        obj = object_name or self.target
        hole = hole_name or f"hole_{obj}"
        return check_inserted(self.geom, self.state, obj, hole)
