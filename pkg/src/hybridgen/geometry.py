"""SE(3) pose algebra: composition, inversion, distances, interpolation.

Poses are stored as a unit quaternion (w, x, y, z) plus a translation in
meters. Quaternions are renormalized on construction and canonicalized to
w >= 0 (ties broken by the first nonzero component) so that equal rotations
serialize to equal bytes. All operations are pure; Pose is an immutable
value type safe to share between workers.

Serialization order everywhere in the project: [qw, qx, qy, qz, tx, ty, tz].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


def _canonicalize(q: Quat) -> Quat:
    w, x, y, z = q
    if w < 0.0:
        return (-w, -x, -y, -z)
    if w == 0.0:
        for c in (x, y, z):
            if c != 0.0:
                return q if c > 0.0 else (-w, -x, -y, -z)
    return q


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation as unit quaternion (w,x,y,z), translation in m."""

    rotation: Quat
    translation: Vec3

    def __post_init__(self):
        w, x, y, z = (float(c) for c in self.rotation)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise ValueError("quaternion norm is zero")
        # Renormalize on any real deviation, but leave already-unit inputs
        # bit-exact so serialization round-trips are lossless.
        if abs(n - 1.0) > 1e-12:
            w, x, y, z = w / n, x / n, y / n, z / n
        q = _canonicalize((w, x, y, z))
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @staticmethod
    def from_translation(t) -> "Pose":
        return Pose((1.0, 0.0, 0.0, 0.0), tuple(t))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        ax, ay, az = (float(c) for c in axis)
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n < 1e-12:
            raise ValueError("rotation axis is zero")
        h = 0.5 * angle
        s = math.sin(h) / n
        return Pose((math.cos(h), ax * s, ay * s, az * s), tuple(translation))

    def apply(self, point) -> Vec3:
        """Map a point from this pose's local frame into the parent frame."""
        px, py, pz = rotate_vector(self.rotation, point)
        tx, ty, tz = self.translation
        return (px + tx, py + ty, pz + tz)

    def as_list(self) -> list[float]:
        return [*self.rotation, *self.translation]

    @staticmethod
    def from_list(values) -> "Pose":
        vals = [float(v) for v in values]
        if len(vals) != 7:
            raise ValueError("pose serialization needs 7 numbers [qw,qx,qy,qz,tx,ty,tz]")
        return Pose(tuple(vals[:4]), tuple(vals[4:]))


@dataclass(frozen=True)
class DistanceWeights:
    """Weights of the SE(3) pseudometric: 1/m for translation, 1/rad for rotation."""

    w_translation: float = 1.0
    w_rotation: float = 0.1

    def __post_init__(self):
        if self.w_translation < 0 or self.w_rotation < 0:
            raise ValueError("distance weights must be nonnegative")
        if self.w_translation == 0 and self.w_rotation == 0:
            raise ValueError("distance weights must not both be zero")


def quat_multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conjugate(q: Quat) -> Quat:
    w, x, y, z = q
    return (w, -x, -y, -z)


def rotate_vector(q: Quat, v) -> Vec3:
    w, x, y, z = q
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    # q * (0,v) * q^-1 expanded via the double-cross identity.
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def compose(a: Pose, b: Pose) -> Pose:
    """Transform b expressed in a's frame: result maps b-local points to a's parent."""
    q = quat_multiply(a.rotation, b.rotation)
    bx, by, bz = rotate_vector(a.rotation, b.translation)
    ax, ay, az = a.translation
    return Pose(q, (ax + bx, ay + by, az + bz))


def inverse(p: Pose) -> Pose:
    qc = quat_conjugate(p.rotation)
    tx, ty, tz = rotate_vector(qc, p.translation)
    return Pose(qc, (-tx, -ty, -tz))


def geodesic_angle(a: Quat, b: Quat) -> float:
    """Rotation angle between two unit quaternions, in [0, pi].

    Double-cover aware: q and -q are the same rotation. Computed through the
    relative quaternion with atan2, which stays accurate near 0 and pi where
    the acos formulation loses digits. Identical inputs return exactly 0.
    """
    if a == b or a == (-b[0], -b[1], -b[2], -b[3]):
        return 0.0
    rw, rx, ry, rz = quat_multiply(quat_conjugate(a), b)
    return 2.0 * math.atan2(math.sqrt(rx * rx + ry * ry + rz * rz), abs(rw))


def pose_distance(a: Pose, b: Pose, w: DistanceWeights = DistanceWeights()) -> float:
    ax, ay, az = a.translation
    bx, by, bz = b.translation
    dt = math.sqrt((ax - bx) ** 2 + (ay - by) ** 2 + (az - bz) ** 2)
    return w.w_translation * dt + w.w_rotation * geodesic_angle(a.rotation, b.rotation)


def interpolate(a: Pose, b: Pose, t: float) -> Pose:
    """Blend translation linearly and rotation along the shortest arc.

    t must be in [0, 1]; endpoints are returned exactly.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter {t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    aw, ax, ay, az = a.rotation
    bw, bx, by, bz = b.rotation
    dot = aw * bw + ax * bx + ay * by + az * bz
    if dot < 0.0:
        bw, bx, by, bz = -bw, -bx, -by, -bz
        dot = -dot
    dot = min(dot, 1.0)
    omega = math.acos(dot)
    if omega < 1e-9:
        # Rotations nearly equal: normalized lerp is exact to machine precision.
        ka, kb = 1.0 - t, t
    else:
        s = math.sin(omega)
        ka = math.sin((1.0 - t) * omega) / s
        kb = math.sin(t * omega) / s
    q = (ka * aw + kb * bw, ka * ax + kb * bx, ka * ay + kb * by, ka * az + kb * bz)
    ta, tb = a.translation, b.translation
    trans = tuple((1.0 - t) * ta[i] + t * tb[i] for i in range(3))
    return Pose(q, trans)
