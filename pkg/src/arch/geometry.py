"""SE(3)/se(3) math, planar cross-sections, and point-cloud distances.

The numeric substrate for the whole workbench: poses are unit-quaternion +
translation, twists live in the tangent space, footprints of pegs and holes
are 2-D cross-sections extruded along z, and the pose-refinement objective is
the one-way Chamfer distance with its analytic tangent-space gradient.

Quaternions are scalar-first (w, x, y, z), Hamilton product, renormalized
after every composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

SMALL_ANGLE = 1e-8


class NearPiRotation(ValueError):
    """Rotation angle too close to pi for a canonical logarithm."""


class UnsupportedOrientation(ValueError):
    """A cross-section was tilted out of the z = const plane."""


class EmptyCloud(ValueError):
    """Point cloud operation received an empty cloud."""


class DegenerateShape(ValueError):
    """Cross-section has no usable area or boundary."""


# ---------------------------------------------------------------------------
# quaternions


def quat_mul(q1, q2):
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm < SMALL_ANGLE:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / norm])


def matrix_to_quat(R):
    # Shepperd's method: pick the most stable of the four branches.
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


# ---------------------------------------------------------------------------
# Pose / Twist


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion (w,x,y,z) and translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_xyz_yaw(cls, x, y, z, yaw) -> "Pose":
        return cls(quat_from_axis_angle([0, 0, 1], yaw), np.array([x, y, z], dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        q = quat_mul(self.rotation, other.rotation)
        t = self.apply(other.translation)
        return Pose(q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qc = quat_conj(self.rotation)
        R = quat_to_matrix(qc)
        return Pose(qc, -R @ self.translation)

    def apply(self, points) -> np.ndarray:
        R = quat_to_matrix(self.rotation)
        pts = np.asarray(points, dtype=float)
        return pts @ R.T + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.rotation)
        T[:3, 3] = self.translation
        return T

    def yaw(self) -> float:
        """Rotation angle about z. Raises if the pose tilts off the z axis."""
        R = quat_to_matrix(self.rotation)
        if abs(R[2, 2] - 1.0) > 1e-6:
            raise UnsupportedOrientation("pose rotation is not about the z axis")
        return float(np.arctan2(R[1, 0], R[0, 0]))

    def to_json(self) -> dict:
        return {"rotation": list(map(float, self.rotation)), "translation": list(map(float, self.translation))}

    @classmethod
    def from_json(cls, data: dict) -> "Pose":
        return cls(np.array(data["rotation"]), np.array(data["translation"]))


@dataclass(frozen=True)
class Twist:
    """se(3) tangent vector: rotational part omega (rad), translational v (m)."""

    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])

    @classmethod
    def from_vector(cls, vec) -> "Twist":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:])


def rotation_angle(q) -> float:
    """Geodesic angle of a unit quaternion, in [0, pi]."""
    # atan2 form is well conditioned near the identity, unlike arccos
    return 2.0 * float(np.arctan2(np.linalg.norm(q[1:]), abs(float(q[0]))))


def se3_exp(xi: Twist) -> Pose:
    """Exponential map se(3) -> SE(3) via Rodrigues and the V matrix."""
    omega = xi.omega
    v = xi.v
    theta = np.linalg.norm(omega)
    if theta < SMALL_ANGLE:
        # second-order series: R ~ I + w^ + w^2/2, V ~ I + w^/2 + w^2/6
        W = _skew(omega)
        R = np.eye(3) + W + 0.5 * W @ W
        V = np.eye(3) + 0.5 * W + W @ W / 6.0
    else:
        axis = omega / theta
        W = _skew(axis)
        s, c = np.sin(theta), np.cos(theta)
        R = np.eye(3) + s * W + (1 - c) * (W @ W)
        V = np.eye(3) + ((1 - c) / theta) * W + ((theta - s) / theta) * (W @ W)
    return Pose(matrix_to_quat(R), V @ v)


def se3_log(p: Pose) -> Twist:
    """Logarithm map SE(3) -> se(3); requires rotation angle < pi."""
    R = quat_to_matrix(p.rotation)
    theta = rotation_angle(p.rotation)
    if theta > np.pi - 1e-6:
        raise NearPiRotation(f"rotation angle {theta:.6f} too close to pi")
    if theta < SMALL_ANGLE:
        omega = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        W = _skew(omega)
        Vinv = np.eye(3) - 0.5 * W + W @ W / 12.0
    else:
        omega = (theta / (2 * np.sin(theta))) * np.array(
            [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
        )
        axis = omega / theta
        W = _skew(axis)
        half = theta / 2
        # V^{-1} = I - (theta/2) w^ + (1 - theta/(2 tan(theta/2))) w^2
        Vinv = np.eye(3) - half * W + (1 - half / np.tan(half)) * (W @ W)
    return Twist(omega, Vinv @ p.translation)


def pose_distance(a: Pose, b: Pose, lambda_rot: float = 0.1) -> float:
    """Translation L2 plus lambda_rot-weighted geodesic rotation angle."""
    if lambda_rot < 0:
        raise ValueError("lambda_rot must be non-negative")
    dt = np.linalg.norm(a.translation - b.translation)
    dq = quat_mul(quat_conj(a.rotation), b.rotation)
    return float(dt + lambda_rot * rotation_angle(dq))


# ---------------------------------------------------------------------------
# cross-sections


@dataclass(frozen=True)
class CrossSection:
    """2-D footprint: simple polygon (CCW vertices), circle, or union of both.

    Circles may carry a local center offset so composites can union
    off-origin discs with polygons.
    """

    kind: str  # "polygon" | "circle" | "composite"
    vertices: np.ndarray | None = None
    radius: float = 0.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    parts: tuple = ()

    def __post_init__(self):
        if self.kind == "polygon":
            verts = np.asarray(self.vertices, dtype=float)
            if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
                raise DegenerateShape("polygon needs >= 3 planar vertices")
            object.__setattr__(self, "vertices", verts)
        elif self.kind == "circle":
            if self.radius <= 0:
                raise DegenerateShape("circle radius must be positive")
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        elif self.kind == "composite":
            if not self.parts:
                raise DegenerateShape("composite needs at least one part")
            object.__setattr__(self, "parts", tuple(self.parts))
        else:
            raise ValueError(f"unknown cross-section kind {self.kind!r}")

    @classmethod
    def polygon(cls, vertices) -> "CrossSection":
        return cls(kind="polygon", vertices=np.asarray(vertices, dtype=float))

    @classmethod
    def circle(cls, radius, center=(0.0, 0.0)) -> "CrossSection":
        return cls(kind="circle", radius=float(radius), center=np.asarray(center, dtype=float))

    @classmethod
    def composite(cls, parts) -> "CrossSection":
        return cls(kind="composite", parts=tuple(parts))

    @classmethod
    def regular_polygon(cls, n: int, circumradius: float, phase: float = 0.0) -> "CrossSection":
        ang = phase + 2 * np.pi * np.arange(n) / n
        return cls.polygon(np.stack([circumradius * np.cos(ang), circumradius * np.sin(ang)], axis=1))

    def primitives(self):
        """Flatten composites into (kind, data) leaves."""
        if self.kind == "composite":
            for part in self.parts:
                yield from part.primitives()
        else:
            yield self

    def bounding_radius(self) -> float:
        r = 0.0
        for prim in self.primitives():
            if prim.kind == "circle":
                r = max(r, float(np.linalg.norm(prim.center)) + prim.radius)
            else:
                r = max(r, float(np.max(np.linalg.norm(prim.vertices, axis=1))))
        return r

    def area(self) -> float:
        """Total area (composites sum their parts; overlap double-counts)."""
        total = 0.0
        for prim in self.primitives():
            if prim.kind == "circle":
                total += np.pi * prim.radius ** 2
            else:
                v = prim.vertices
                nxt = np.roll(v, -1, axis=0)
                total += 0.5 * abs(float(np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1])))
        return total

    def boundary_points(self, per_edge: int = 4) -> np.ndarray:
        """Sampled boundary in the local frame (vertices plus edge subdivisions)."""
        pts = []
        for prim in self.primitives():
            if prim.kind == "circle":
                n = max(8, per_edge * 8)
                ang = 2 * np.pi * np.arange(n) / n
                pts.append(prim.center + prim.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1))
            else:
                verts = prim.vertices
                nxt = np.roll(verts, -1, axis=0)
                for k in range(per_edge):
                    f = k / per_edge
                    pts.append(verts * (1 - f) + nxt * f)
        return np.concatenate(pts, axis=0)

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Membership test for an (n,2) array of local-frame points."""
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for prim in self.primitives():
            if prim.kind == "circle":
                inside |= np.linalg.norm(points - prim.center, axis=1) <= prim.radius
            else:
                inside |= _points_in_polygon(points, prim.vertices)
        return inside

    def to_json(self) -> dict:
        if self.kind == "polygon":
            return {"kind": "polygon", "vertices": self.vertices.tolist()}
        if self.kind == "circle":
            return {"kind": "circle", "radius": self.radius, "center": self.center.tolist()}
        return {"kind": "composite", "parts": [p.to_json() for p in self.parts]}

    @classmethod
    def from_json(cls, data: dict) -> "CrossSection":
        kind = data["kind"]
        if kind == "polygon":
            return cls.polygon(np.array(data["vertices"]))
        if kind == "circle":
            return cls.circle(data["radius"], data.get("center", (0.0, 0.0)))
        return cls.composite([cls.from_json(p) for p in data["parts"]])


def _points_in_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Vectorized even-odd ray cast, broadcast over points x edges."""
    x = points[:, 0:1]
    y = points[:, 1:2]
    xi = verts[:, 0][None, :]
    yi = verts[:, 1][None, :]
    xj = np.roll(verts[:, 0], 1)[None, :]
    yj = np.roll(verts[:, 1], 1)[None, :]
    crosses = (yi > y) != (yj > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = xi + (y - yi) * (xj - xi) / (yj - yi)
    hits = crosses & (x < xcross)
    return (np.count_nonzero(hits, axis=1) % 2).astype(bool)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    if abs(d1) < 1e-15 and on_seg(p3, p4, p1):
        return True
    if abs(d2) < 1e-15 and on_seg(p3, p4, p2):
        return True
    if abs(d3) < 1e-15 and on_seg(p1, p2, p3):
        return True
    if abs(d4) < 1e-15 and on_seg(p1, p2, p4):
        return True
    return False


def _planar_frame(pose: Pose) -> tuple[np.ndarray, float]:
    """(xy, yaw) of a pose; raises UnsupportedOrientation if tilted."""
    yaw = pose.yaw()  # raises when tilted
    return pose.translation[:2], yaw


def _transform_2d(points: np.ndarray, xy: np.ndarray, yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, -s], [s, c]])
    return points @ R.T + xy


def _poly_poly_collide(va: np.ndarray, vb: np.ndarray) -> bool:
    if np.any(_points_in_polygon(va, vb)) or np.any(_points_in_polygon(vb, va)):
        return True
    na, nb = len(va), len(vb)
    for i in range(na):
        a1, a2 = va[i], va[(i + 1) % na]
        for j in range(nb):
            if _segments_intersect(a1, a2, vb[j], vb[(j + 1) % nb]):
                return True
    return False


def _circle_poly_collide(center: np.ndarray, radius: float, verts: np.ndarray) -> bool:
    if _points_in_polygon(center[None, :], verts)[0]:
        return True
    nxt = np.roll(verts, -1, axis=0)
    edge = nxt - verts
    rel = center - verts
    t = np.clip(np.einsum("ij,ij->i", rel, edge) / np.einsum("ij,ij->i", edge, edge), 0, 1)
    closest = verts + t[:, None] * edge
    return bool(np.min(np.linalg.norm(closest - center, axis=1)) <= radius)


def section_collides(a: CrossSection, pose_a: Pose, b: CrossSection, pose_b: Pose) -> bool:
    """Planar footprint intersection test under z-axis-rotation poses."""
    xy_a, yaw_a = _planar_frame(pose_a)
    xy_b, yaw_b = _planar_frame(pose_b)
    # cheap bounding-circle reject
    if np.linalg.norm(xy_a - xy_b) > a.bounding_radius() + b.bounding_radius():
        return False
    for pa in a.primitives():
        for pb in b.primitives():
            if _primitive_collide(pa, xy_a, yaw_a, pb, xy_b, yaw_b):
                return True
    return False


def _primitive_collide(pa, xy_a, yaw_a, pb, xy_b, yaw_b) -> bool:
    if pa.kind == "circle" and pb.kind == "circle":
        ca = _transform_2d(pa.center[None, :], xy_a, yaw_a)[0]
        cb = _transform_2d(pb.center[None, :], xy_b, yaw_b)[0]
        return np.linalg.norm(ca - cb) <= pa.radius + pb.radius
    if pa.kind == "circle":
        ca = _transform_2d(pa.center[None, :], xy_a, yaw_a)[0]
        vb = _transform_2d(pb.vertices, xy_b, yaw_b)
        return _circle_poly_collide(ca, pa.radius, vb)
    if pb.kind == "circle":
        cb = _transform_2d(pb.center[None, :], xy_b, yaw_b)[0]
        va = _transform_2d(pa.vertices, xy_a, yaw_a)
        return _circle_poly_collide(cb, pb.radius, va)
    va = _transform_2d(pa.vertices, xy_a, yaw_a)
    vb = _transform_2d(pb.vertices, xy_b, yaw_b)
    return _poly_poly_collide(va, vb)


def section_contains(outer: CrossSection, pose_out: Pose, inner: CrossSection, pose_in: Pose,
                     per_edge: int = 4) -> bool:
    """True when every sampled boundary point of `inner` lies inside `outer`."""
    xy_o, yaw_o = _planar_frame(pose_out)
    xy_i, yaw_i = _planar_frame(pose_in)
    pts = _transform_2d(inner.boundary_points(per_edge), xy_i, yaw_i)
    local = _transform_2d(pts - xy_o, np.zeros(2), 0.0)
    # rotate into outer's local frame
    c, s = np.cos(-yaw_o), np.sin(-yaw_o)
    R = np.array([[c, -s], [s, c]])
    local = local @ R.T
    return bool(np.all(outer.contains_points(local)))


# ---------------------------------------------------------------------------
# point clouds


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points), self.frame)

    def to_json(self) -> dict:
        return {"frame": self.frame, "points": self.points.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "PointCloud":
        return cls(np.array(data["points"]), data.get("frame", "world"))


_BRUTE_FORCE_LIMIT = 200


def _nearest(model_world: np.ndarray, observed: np.ndarray):
    """Index of the nearest observed point for each transformed model point."""
    if len(observed) < _BRUTE_FORCE_LIMIT or len(model_world) < _BRUTE_FORCE_LIMIT:
        d2 = np.sum((model_world[:, None, :] - observed[None, :, :]) ** 2, axis=2)
        return np.argmin(d2, axis=1)
    tree = cKDTree(observed)
    _, idx = tree.query(model_world)
    return idx


def chamfer_oneway(model: PointCloud, observed: PointCloud, xi_pose: Pose) -> float:
    """Sum over model points of the distance to the nearest observed point."""
    if len(model) == 0 or len(observed) == 0:
        raise EmptyCloud("chamfer distance needs non-empty clouds")
    world = xi_pose.apply(model.points)
    idx = _nearest(world, observed.points)
    return float(np.sum(np.linalg.norm(world - observed.points[idx], axis=1)))


def chamfer_gradient(model: PointCloud, observed: PointCloud, xi_pose: Pose) -> np.ndarray:
    """Gradient of the one-way Chamfer sum w.r.t. a left tangent perturbation.

    Correspondences are frozen at the current pose; ordering matches
    Twist.as_vector(): (omega, v).
    """
    if len(model) == 0 or len(observed) == 0:
        raise EmptyCloud("chamfer gradient needs non-empty clouds")
    world = xi_pose.apply(model.points)
    idx = _nearest(world, observed.points)
    resid = world - observed.points[idx]
    norms = np.linalg.norm(resid, axis=1)
    mask = norms > 1e-12
    unit = np.zeros_like(resid)
    unit[mask] = resid[mask] / norms[mask, None]
    g_v = unit.sum(axis=0)
    g_omega = np.cross(world, unit).sum(axis=0)
    return np.concatenate([g_omega, g_v])
