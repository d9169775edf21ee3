"""Signed distance primitives: sphere, box, capsule.

Distances are exact for each primitive: negative inside, zero on the
surface, positive outside. Shapes are defined in their own local frame;
``transformed`` bakes a world pose in so scene objects and planner
obstacles share one representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParseError, ValidationError
from .geometry import Pose, Vec3, compose, rotate_vector


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError("sphere radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def sdf(self, point) -> float:
        cx, cy, cz = self.center
        px, py, pz = point
        return math.sqrt((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2) - self.radius

    def transformed(self, pose: Pose) -> "Sphere":
        return Sphere(pose.apply(self.center), self.radius)

    def bounding_radius(self) -> float:
        cx, cy, cz = self.center
        return math.sqrt(cx * cx + cy * cy + cz * cz) + self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    center: Vec3
    half_extents: Vec3
    orientation: Pose = Pose.identity()

    def __post_init__(self):
        if any(h <= 0 for h in self.half_extents):
            raise ValidationError("box half-extents must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))
        # Orientation is rotation-only; any translation on the pose is ignored.
        object.__setattr__(self, "orientation", Pose(self.orientation.rotation, (0, 0, 0)))
        q = self.orientation.rotation
        object.__setattr__(self, "_axis_aligned", q == (1.0, 0.0, 0.0, 0.0))
        object.__setattr__(self, "_inv_rotation", (q[0], -q[1], -q[2], -q[3]))

    def sdf(self, point) -> float:
        cx, cy, cz = self.center
        d = (point[0] - cx, point[1] - cy, point[2] - cz)
        if not self._axis_aligned:
            d = rotate_vector(self._inv_rotation, d)
        qx = abs(d[0]) - self.half_extents[0]
        qy = abs(d[1]) - self.half_extents[1]
        qz = abs(d[2]) - self.half_extents[2]
        ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
        outside = math.sqrt(ox * ox + oy * oy + oz * oz)
        return outside + min(max(qx, qy, qz), 0.0)

    def transformed(self, pose: Pose) -> "Box":
        return Box(
            pose.apply(self.center),
            self.half_extents,
            compose(Pose(pose.rotation, (0, 0, 0)), self.orientation),
        )

    def bounding_radius(self) -> float:
        cx, cy, cz = self.center
        hx, hy, hz = self.half_extents
        return math.sqrt(cx * cx + cy * cy + cz * cz) + math.sqrt(hx * hx + hy * hy + hz * hz)

    def to_dict(self) -> dict:
        return {
            "type": "box",
            "center": list(self.center),
            "half_extents": list(self.half_extents),
            "orientation": self.orientation.as_list(),
        }


@dataclass(frozen=True)
class Capsule:
    a: Vec3
    b: Vec3
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError("capsule radius must be positive")
        object.__setattr__(self, "a", tuple(float(c) for c in self.a))
        object.__setattr__(self, "b", tuple(float(c) for c in self.b))

    def sdf(self, point) -> float:
        px, py, pz = point
        ax, ay, az = self.a
        bx, by, bz = self.b
        abx, aby, abz = bx - ax, by - ay, bz - az
        apx, apy, apz = px - ax, py - ay, pz - az
        denom = abx * abx + aby * aby + abz * abz
        t = 0.0 if denom == 0 else max(0.0, min(1.0, (apx * abx + apy * aby + apz * abz) / denom))
        dx, dy, dz = apx - t * abx, apy - t * aby, apz - t * abz
        return math.sqrt(dx * dx + dy * dy + dz * dz) - self.radius

    def transformed(self, pose: Pose) -> "Capsule":
        return Capsule(pose.apply(self.a), pose.apply(self.b), self.radius)

    def bounding_radius(self) -> float:
        ra = math.sqrt(sum(c * c for c in self.a))
        rb = math.sqrt(sum(c * c for c in self.b))
        return max(ra, rb) + self.radius

    def to_dict(self) -> dict:
        return {"type": "capsule", "a": list(self.a), "b": list(self.b), "radius": self.radius}


Primitive = Sphere | Box | Capsule


def primitive_from_dict(data: dict) -> Primitive:
    kind = data.get("type")
    try:
        if kind == "sphere":
            return Sphere(tuple(data["center"]), float(data["radius"]))
        if kind == "box":
            orientation = Pose.from_list(data["orientation"]) if "orientation" in data else Pose.identity()
            return Box(tuple(data["center"]), tuple(data["half_extents"]), orientation)
        if kind == "capsule":
            return Capsule(tuple(data["a"]), tuple(data["b"]), float(data["radius"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed {kind} primitive: {exc}") from exc
    raise ParseError(f"unknown primitive type {kind!r}")
