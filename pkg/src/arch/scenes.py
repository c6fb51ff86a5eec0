"""Workcell scene description: table, insertion board with holes, fixture,
objects, and the grasp randomization grid.

A scene is a static description; the simulator compiles it into fast
world-frame geometry. Scenes serialize to JSON (``scenes/*.json``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.ops import unary_union

from .geometry import CrossSection, Pose


class InfeasibleSpec(ValueError):
    """Spawn randomization could not produce a collision-free layout."""


class UnknownObject(KeyError):
    pass


class UnknownHole(KeyError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    section: CrossSection
    height: float
    init_pose: Pose
    symmetry: int = 1  # 0 = continuous (circle), k = k-fold about z
    upright: bool = True  # False: must be reoriented in the fixture first

    def to_json(self):
        return {
            "name": self.name,
            "section": self.section.to_json(),
            "height": self.height,
            "init_pose": self.init_pose.to_json(),
            "symmetry": self.symmetry,
            "upright": self.upright,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            d["name"],
            CrossSection.from_json(d["section"]),
            d["height"],
            Pose.from_json(d["init_pose"]),
            d.get("symmetry", 1),
            d.get("upright", True),
        )


@dataclass(frozen=True)
class HoleSpec:
    name: str
    section: CrossSection  # already inflated by the clearance
    pose: Pose  # top-center of the cavity (z = board top)
    depth: float

    def to_json(self):
        return {
            "name": self.name,
            "section": self.section.to_json(),
            "pose": self.pose.to_json(),
            "depth": self.depth,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["name"], CrossSection.from_json(d["section"]), Pose.from_json(d["pose"]), d["depth"])


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...]
    holes: tuple[HoleSpec, ...]
    board_section: CrossSection
    board_pose: Pose  # top-center of the board slab
    fixture_pose: Pose
    table_height: float
    grasp_centers: tuple  # four (x, y) centers
    grasp_angles: tuple  # five yaw angles
    clearance: float
    jitter_xy: float = 0.005
    jitter_yaw: float = np.deg2rad(5.0)
    bounds_lo: tuple = (-0.35, -0.25, 0.0, -np.pi)
    bounds_hi: tuple = (0.35, 0.25, 0.25, np.pi)

    def __post_init__(self):
        if self.clearance <= 0:
            raise InfeasibleSpec("hole clearance must be positive")
        if len(set(np.round(self.grasp_angles, 9))) != len(self.grasp_angles):
            raise InfeasibleSpec("grasp randomization angles must be distinct")

    def object(self, name: str) -> ObjectSpec:
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise UnknownObject(name)

    def hole(self, name: str) -> HoleSpec:
        for hole in self.holes:
            if hole.name == name:
                return hole
        raise UnknownHole(name)

    def hole_for(self, object_name: str) -> HoleSpec:
        return self.hole(f"hole_{object_name}")

    @property
    def board_top(self) -> float:
        return float(self.board_pose.translation[2])

    def to_json(self):
        return {
            "objects": [o.to_json() for o in self.objects],
            "holes": [h.to_json() for h in self.holes],
            "board_section": self.board_section.to_json(),
            "board_pose": self.board_pose.to_json(),
            "fixture_pose": self.fixture_pose.to_json(),
            "table_height": self.table_height,
            "grasp_centers": [list(c) for c in self.grasp_centers],
            "grasp_angles": list(self.grasp_angles),
            "clearance": self.clearance,
            "jitter_xy": self.jitter_xy,
            "jitter_yaw": self.jitter_yaw,
            "bounds_lo": list(self.bounds_lo),
            "bounds_hi": list(self.bounds_hi),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            tuple(ObjectSpec.from_json(o) for o in d["objects"]),
            tuple(HoleSpec.from_json(h) for h in d["holes"]),
            CrossSection.from_json(d["board_section"]),
            Pose.from_json(d["board_pose"]),
            Pose.from_json(d["fixture_pose"]),
            d["table_height"],
            tuple(tuple(c) for c in d["grasp_centers"]),
            tuple(d["grasp_angles"]),
            d["clearance"],
            d.get("jitter_xy", 0.005),
            d.get("jitter_yaw", np.deg2rad(5.0)),
            tuple(d.get("bounds_lo", (-0.35, -0.25, 0.0, -np.pi))),
            tuple(d.get("bounds_hi", (0.35, 0.25, 0.25, np.pi))),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as f:
            return cls.from_json(json.load(f))


# ---------------------------------------------------------------------------
# scene construction helpers


def _section_to_shapely(section: CrossSection):
    geoms = []
    for prim in section.primitives():
        if prim.kind == "circle":
            geoms.append(ShapelyPoint(prim.center).buffer(prim.radius, quad_segs=32))
        else:
            geoms.append(ShapelyPolygon(prim.vertices))
    return unary_union(geoms)


def inflate_section(section: CrossSection, delta: float) -> CrossSection:
    """Outward offset of a footprint; used to carve holes with clearance."""
    if section.kind == "circle" and not np.any(section.center):
        return CrossSection.circle(section.radius + delta)
    shape = _section_to_shapely(section).buffer(delta, quad_segs=16, join_style=2)
    verts = np.asarray(shape.exterior.coords[:-1], dtype=float)
    if shape.exterior.is_ccw is False:
        verts = verts[::-1]
    return CrossSection.polygon(verts)


def _star(outer: float, inner: float, points: int = 5) -> CrossSection:
    ang = np.pi / 2 + np.arange(2 * points) * np.pi / points
    radii = np.where(np.arange(2 * points) % 2 == 0, outer, inner)
    return CrossSection.polygon(np.stack([radii * np.cos(ang), radii * np.sin(ang)], axis=1))


def _ellipse(rx: float, ry: float, n: int = 24) -> CrossSection:
    ang = 2 * np.pi * np.arange(n) / n
    return CrossSection.polygon(np.stack([rx * np.cos(ang), ry * np.sin(ang)], axis=1))


def _rect(w: float, h: float, cx: float = 0.0, cy: float = 0.0) -> CrossSection:
    return CrossSection.polygon(
        [
            [cx - w / 2, cy - h / 2],
            [cx + w / 2, cy - h / 2],
            [cx + w / 2, cy + h / 2],
            [cx - w / 2, cy + h / 2],
        ]
    )


def _union_polygon(parts) -> CrossSection:
    shape = _section_to_shapely(CrossSection.composite(parts))
    verts = np.asarray(shape.exterior.coords[:-1], dtype=float)
    if shape.exterior.is_ccw is False:
        verts = verts[::-1]
    return CrossSection.polygon(verts)


def _three_prong() -> CrossSection:
    parts = []
    for k in range(3):
        ang = k * 2 * np.pi / 3
        c, s = np.cos(ang), np.sin(ang)
        rect = _rect(0.030, 0.009, cx=0.009, cy=0.0)
        verts = rect.vertices @ np.array([[c, s], [-s, c]])
        parts.append(CrossSection.polygon(verts))
    return _union_polygon(parts)


def _arch_shape() -> CrossSection:
    # rectangular legs under a semicircular crown
    crown = CrossSection.circle(0.015, center=(0.0, 0.004))
    base = _rect(0.030, 0.014, cy=-0.006)
    return _union_polygon([crown, base])


OBJECT_SHAPES = {
    "hexagon": (CrossSection.regular_polygon(6, 0.018), 6),
    "star": (_star(0.020, 0.010), 5),
    "circle": (CrossSection.circle(0.015), 0),
    "oval": (_ellipse(0.020, 0.013), 2),
    "rectangle": (_rect(0.036, 0.020), 2),
    "square_circle": (_union_polygon([_rect(0.026, 0.026, cx=-0.006), CrossSection.circle(0.013, center=(0.010, 0.0))]), 1),
    "three_prong": (_three_prong(), 3),
    "arch": (_arch_shape(), 1),
    "double_square": (_union_polygon([_rect(0.016, 0.016, cx=-0.008), _rect(0.016, 0.016, cx=0.008)]), 2),
}

OBJECT_HEIGHT = 0.050
HOLE_DEPTH = 0.020
BOARD_TOP = 0.040


def build_scene(
    objects=None,
    clearance: float = 0.001,
    jitter_xy: float = 0.005,
    jitter_yaw: float = np.deg2rad(5.0),
) -> SceneSpec:
    """Assemble the desk-scale insertion scene with the named objects."""
    names = list(objects or OBJECT_SHAPES)
    hole_xy = [(x, y) for x in (0.10, 0.19, 0.28) for y in (-0.14, 0.0, 0.14)]
    staging_y = np.linspace(-0.20, 0.20, max(len(names), 2))

    objs, holes = [], []
    for i, name in enumerate(names):
        section, sym = OBJECT_SHAPES[name]
        init = Pose.from_xyz_yaw(-0.30, float(staging_y[i]), 0.0, 0.0)
        objs.append(ObjectSpec(name, section, OBJECT_HEIGHT, init, symmetry=sym))
        hx, hy = hole_xy[i % len(hole_xy)]
        holes.append(
            HoleSpec(
                f"hole_{name}",
                inflate_section(section, clearance),
                Pose.from_xyz_yaw(hx, hy, BOARD_TOP, 0.0),
                HOLE_DEPTH,
            )
        )

    return SceneSpec(
        objects=tuple(objs),
        holes=tuple(holes),
        board_section=_rect(0.30, 0.44),
        board_pose=Pose.from_xyz_yaw(0.19, 0.0, BOARD_TOP, 0.0),
        fixture_pose=Pose.from_xyz_yaw(-0.10, 0.20, 0.0, 0.0),
        table_height=0.0,
        grasp_centers=((-0.20, -0.12), (-0.20, 0.04), (-0.13, -0.04), (-0.13, 0.12)),
        grasp_angles=tuple(np.deg2rad([0.0, 20.0, 40.0, -20.0, -40.0])),
        clearance=clearance,
        jitter_xy=jitter_xy,
        jitter_yaw=jitter_yaw,
    )


def default_scene() -> SceneSpec:
    """The packaged nine-object insertion scene."""
    ref = resources.files("arch") / "scenes" / "fmb_board.json"
    return SceneSpec.from_json(json.loads(ref.read_text()))
