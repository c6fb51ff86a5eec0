"""Lazy probabilistic roadmap planner over the (x, y, z, yaw) workspace.

Edges are added without collision checks at build time ("lazy"); a query
repeatedly extracts the shortest path over not-yet-invalidated edges and
validates only the edges on that path. Edge status is monotone: once an edge
is known valid or invalid it is never re-checked.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CrossSection
from .rng import RngStream
from .scenes import SceneSpec
from .workcell import EE_HEIGHT, EE_RADIUS, SceneGeometry, WorkcellState, _lateral_ok

LAMBDA_ROT = 0.1
EDGE_RESOLUTION_XYZ = 1e-3  # m
EDGE_RESOLUTION_YAW = np.deg2rad(1.0)

UNKNOWN, VALID, INVALID = 0, 1, 2


class BoundsEmpty(ValueError):
    """The workspace box has no volume."""


class NoPath(RuntimeError):
    """The roadmap has no collision-free path between the query endpoints."""


class StartInCollision(ValueError):
    pass


class GoalInCollision(ValueError):
    pass


def config_distance(a, b, lambda_rot: float = LAMBDA_ROT) -> float:
    """Path-length metric: translation L2 plus weighted wrapped yaw."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dyaw = abs((b[3] - a[3] + np.pi) % (2 * np.pi) - np.pi)
    return float(np.linalg.norm(b[:3] - a[:3]) + lambda_rot * dyaw)


def _interpolate(a, b):
    """Configurations along a-b at 1 mm / 1 deg resolution (endpoints included)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dyaw = (b[3] - a[3] + np.pi) % (2 * np.pi) - np.pi
    steps = max(
        int(math.ceil(np.linalg.norm(b[:3] - a[:3]) / EDGE_RESOLUTION_XYZ)),
        int(math.ceil(abs(dyaw) / EDGE_RESOLUTION_YAW)),
        1,
    )
    out = np.empty((steps + 1, 4))
    for t in range(steps + 1):
        s = t / steps
        out[t, :3] = a[:3] + s * (b[:3] - a[:3])
        out[t, 3] = a[3] + s * dyaw
    return out


def edge_free(a, b, collision_fn, resolution_scale: float = 1.0) -> bool:
    """Straight-line edge validity under interpolated collision checks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dyaw = (b[3] - a[3] + np.pi) % (2 * np.pi) - np.pi
    steps = max(
        int(math.ceil(np.linalg.norm(b[:3] - a[:3]) / (EDGE_RESOLUTION_XYZ * resolution_scale))),
        int(math.ceil(abs(dyaw) / (EDGE_RESOLUTION_YAW * resolution_scale))),
        1,
    )
    for t in range(steps + 1):
        s = t / steps
        q = np.array([*(a[:3] + s * (b[:3] - a[:3])), a[3] + s * dyaw])
        if collision_fn(q):
            return False
    return True


@dataclass
class Roadmap:
    nodes: np.ndarray  # (n, 4)
    edges: dict  # (i, j) with i < j -> status
    neighbors: list  # adjacency: list of lists of node ids
    k_neighbors: int
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray

    def status(self, i: int, j: int) -> int:
        return self.edges[(i, j) if i < j else (j, i)]

    def set_status(self, i: int, j: int, status: int) -> None:
        key = (i, j) if i < j else (j, i)
        if self.edges[key] != UNKNOWN and self.edges[key] != status:
            raise ValueError("edge status is monotone; cannot flip valid/invalid")
        self.edges[key] = status

    def to_json(self):
        return {
            "nodes": self.nodes.tolist(),
            "edges": [[i, j, s] for (i, j), s in sorted(self.edges.items())],
            "k_neighbors": self.k_neighbors,
            "bounds_lo": self.bounds_lo.tolist(),
            "bounds_hi": self.bounds_hi.tolist(),
        }

    @classmethod
    def from_json(cls, d) -> "Roadmap":
        nodes = np.asarray(d["nodes"], dtype=float)
        edges = {(i, j): s for i, j, s in d["edges"]}
        neighbors = [[] for _ in range(len(nodes))]
        for i, j in edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        return cls(
            nodes,
            edges,
            neighbors,
            d["k_neighbors"],
            np.asarray(d["bounds_lo"], dtype=float),
            np.asarray(d["bounds_hi"], dtype=float),
        )


@dataclass
class PathResult:
    waypoints: np.ndarray  # (m, 4)
    length: float
    checked_edges: int

    def to_json(self):
        return {
            "waypoints": self.waypoints.tolist(),
            "length": self.length,
            "checked_edges": self.checked_edges,
        }


def scene_collision_fn(
    scene: SceneSpec,
    attached: CrossSection | None = None,
    attached_height: float | None = None,
):
    """Static configuration validity: the free-flying end-effector (plus an
    optionally attached footprint hanging below it) against the board slab,
    table, and workspace bounds. Resting objects are a per-query concern and
    belong to the live ``collision_fn`` (see :func:`state_collision_fn`)."""
    geom = SceneGeometry(scene)
    if attached is not None and attached_height is None:
        attached_height = max(o.height for o in scene.objects)
    boundary = attached.boundary_points(per_edge=2) if attached is not None else None
    bounding = attached.bounding_radius() if attached is not None else 0.0

    def collides(q) -> bool:
        q = np.asarray(q, dtype=float)
        if np.any(q[:3] < geom.lo[:3]) or np.any(q[:3] > geom.hi[:3]):
            return True
        if q[2] < geom.table:
            return True
        bottoms = [(q[2], _ee_pts(q))]
        if boundary is not None:
            bottom = q[2] - attached_height
            if bottom < geom.table - 1e-12:
                return True
            c, s = np.cos(q[3]), np.sin(q[3])
            pts = boundary @ np.array([[c, s], [-s, c]]) + q[:2]
            bottoms.append((bottom, pts))
        for bottom, pts in bottoms:
            if bottom < geom.board_top - 1e-12 and geom.over_board(pts, q[:2], bounding + EE_RADIUS):
                hole = geom.hole_fully_containing(pts, q[:2], bounding + EE_RADIUS)
                if hole is None or bottom < hole.bottom - 1e-12:
                    return True
        return False

    def _ee_pts(q):
        return geom.ee_footprint(q[:2])

    return collides


def state_collision_fn(geom: SceneGeometry, state: WorkcellState):
    """Live configuration validity against the current workcell state,
    including resting objects and any attached object. Pure per spec: the
    captured state is an immutable snapshot."""
    def collides(q) -> bool:
        q = np.asarray(q, dtype=float)
        if np.any(q[:3] < geom.lo[:3]) or np.any(q[:3] > geom.hi[:3]):
            return True
        if q[2] < geom.table - 1e-12:
            return True
        if state.attached is not None and q[2] + state.attached_rel[2] < geom.table - 1e-12:
            return True
        return not _lateral_ok(geom, state, q)

    return collides


def build_roadmap(
    scene: SceneSpec,
    attached: CrossSection | None = None,
    n: int = 500,
    k: int = 10,
    seed: int = 0,
    collision_fn=None,
) -> Roadmap:
    """Sample ``n`` collision-free configurations and connect each to its
    ``k`` nearest neighbours with unknown-status edges (no edge checks)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if k < 1:
        raise ValueError("k must be >= 1")
    lo = np.asarray(scene.bounds_lo, dtype=float)
    hi = np.asarray(scene.bounds_hi, dtype=float)
    if np.any(hi <= lo):
        raise BoundsEmpty("workspace bounds box is empty")
    if collision_fn is None:
        collision_fn = scene_collision_fn(scene, attached)

    g = RngStream(seed).draw("prm_nodes")
    nodes = np.empty((n, 4))
    accepted = 0
    attempts = 0
    while accepted < n:
        q = lo + (hi - lo) * g.random(4)
        attempts += 1
        if attempts > 1000 * n:
            raise BoundsEmpty("could not sample collision-free configurations")
        if collision_fn(q):
            continue
        nodes[accepted] = q
        accepted += 1

    # k-nearest-neighbour edges under the path-length metric
    dxyz = np.linalg.norm(nodes[:, None, :3] - nodes[None, :, :3], axis=2)
    dyaw = np.abs((nodes[:, None, 3] - nodes[None, :, 3] + np.pi) % (2 * np.pi) - np.pi)
    dist = dxyz + LAMBDA_ROT * dyaw
    np.fill_diagonal(dist, np.inf)
    edges = {}
    neighbors = [[] for _ in range(n)]
    kk = min(k, n - 1)
    order = np.argsort(dist, axis=1)[:, :kk]
    for i in range(n):
        for j in order[i]:
            j = int(j)
            key = (i, j) if i < j else (j, i)
            if key not in edges:
                edges[key] = UNKNOWN
                neighbors[i].append(j)
                neighbors[j].append(i)
    return Roadmap(nodes, edges, neighbors, k, lo, hi)


def _dijkstra(n_nodes, nodes, neighbors, status_fn, start_id, goal_id):
    """Shortest path over non-invalid edges; returns node id list or None."""
    dist = {start_id: 0.0}
    prev = {}
    heap = [(0.0, start_id)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == goal_id:
            path = [u]
            while path[-1] != start_id:
                path.append(prev[path[-1]])
            return path[::-1]
        done.add(u)
        for v in neighbors[u]:
            if v in done or status_fn(u, v) == INVALID:
                continue
            nd = d + config_distance(nodes[u], nodes[v])
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def lazy_query(roadmap: Roadmap, start, goal, collision_fn) -> PathResult:
    """Repeatedly extract the shortest candidate path and validate its
    unknown edges until a fully valid path emerges or no candidate remains."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if collision_fn(start):
        raise StartInCollision(f"start configuration {start.tolist()} collides")
    if collision_fn(goal):
        raise GoalInCollision(f"goal configuration {goal.tolist()} collides")

    n = len(roadmap.nodes)
    sid, gid = n, n + 1
    nodes = np.vstack([roadmap.nodes, start[None], goal[None]])
    neighbors = [list(adj) for adj in roadmap.neighbors] + [[], []]

    # query-time connections: start and goal to their k nearest roadmap
    # nodes, plus the direct start-goal edge
    kk = min(roadmap.k_neighbors, n)
    temp_status = {}
    for qid in (sid, gid):
        d = np.linalg.norm(roadmap.nodes[:, :3] - nodes[qid, :3], axis=1)
        d += LAMBDA_ROT * np.abs(
            (roadmap.nodes[:, 3] - nodes[qid, 3] + np.pi) % (2 * np.pi) - np.pi
        )
        for j in np.argsort(d)[:kk]:
            j = int(j)
            neighbors[qid].append(j)
            neighbors[j].append(qid)
            temp_status[(j, qid)] = UNKNOWN
    neighbors[sid].append(gid)
    neighbors[gid].append(sid)
    temp_status[(sid, gid)] = UNKNOWN

    def status(i, j):
        key = (i, j) if i < j else (j, i)
        if key in temp_status:
            return temp_status[key]
        return roadmap.edges[key]

    checked = 0
    while True:
        ids = _dijkstra(n + 2, nodes, neighbors, status, sid, gid)
        if ids is None:
            raise NoPath("all candidate paths exhausted")
        ok = True
        for u, v in zip(ids[:-1], ids[1:]):
            if status(u, v) != UNKNOWN:
                continue
            checked += 1
            valid = edge_free(nodes[u], nodes[v], collision_fn)
            key = (u, v) if u < v else (v, u)
            if key in temp_status:
                temp_status[key] = VALID if valid else INVALID
            else:
                roadmap.set_status(u, v, VALID if valid else INVALID)
            if not valid:
                ok = False
                break
        if ok:
            waypoints = nodes[ids]
            length = sum(
                config_distance(a, b) for a, b in zip(waypoints[:-1], waypoints[1:])
            )
            return PathResult(waypoints, float(length), checked)


def shortcut(path: PathResult, collision_fn, iterations: int = 30, seed: int = 0) -> PathResult:
    """Randomized waypoint shortcutting; never lengthens the path."""
    wps = [np.asarray(w, dtype=float) for w in path.waypoints]
    checked = path.checked_edges
    g = RngStream(seed).draw("shortcut")
    for _ in range(iterations):
        if len(wps) < 3:
            break
        i, j = sorted(g.integers(0, len(wps), size=2))
        if j - i < 2:
            continue
        checked += 1
        if edge_free(wps[i], wps[j], collision_fn):
            wps = wps[: i + 1] + wps[j:]
    waypoints = np.asarray(wps)
    length = sum(config_distance(a, b) for a, b in zip(waypoints[:-1], waypoints[1:]))
    return PathResult(waypoints, float(length), checked)


def dump_roadmap(roadmap: Roadmap, path) -> None:
    with open(path, "w") as f:
        json.dump(roadmap.to_json(), f)
