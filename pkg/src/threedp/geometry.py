"""Rigid transforms, unit quaternions, Hopf coordinates and contact frames.

Quaternions are stored scalar-first ``(w, x, y, z)``. All lengths are in
centimetres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

from .errors import InvalidFace, SingularOrientation

TOL_POLE = 1e-6
TWO_PI = 2.0 * np.pi

# Face order -x, +x, -y, +y, -z, +z. Each frame has +z along the outward
# normal; the in-plane x axis comes from this table and y = n cross x.
FACE_NORMALS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=float
)
FACE_XAXES = np.array(
    [[0, 1, 0], [0, 1, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0]], dtype=float
)
N_FACES = 6


# ---------------------------------------------------------------- quaternions


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; broadcasts over leading axes."""
    if type(a) is np.ndarray and type(b) is np.ndarray and a.ndim == 1 and b.ndim == 1:
        aw, ax, ay, az = a.tolist()
        bw, bx, by, bz = b.tolist()
        return np.array([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ])
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Pick the representative with w >= 0, then x >= 0, then y >= 0, then z > 0.

    Only flips the sign; does not renormalise.
    """
    q = np.array(q, dtype=float)
    if q.ndim == 1:
        for c in q.tolist():
            if c != 0.0:
                return -q if c < 0.0 else q
        return q
    flat = q.reshape(-1, 4)
    nz = flat != 0.0
    first = np.argmax(nz, axis=1)
    lead = flat[np.arange(len(flat)), first]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return (flat * sign[:, None]).reshape(q.shape)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    if type(q) is np.ndarray and q.ndim == 1:
        w, x, y, z = q.tolist()
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(m.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a canonical unit quaternion."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    diag = (tr, m[0, 0], m[1, 1], m[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return canonical_quat(q / np.linalg.norm(q))


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return canonical_quat(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def quat_angle(q1: np.ndarray, q2: np.ndarray) -> float:
    """Geodesic rotation angle between two unit quaternions, in radians."""
    d = abs(float(np.dot(q1, q2)))
    return 2.0 * float(np.arccos(min(1.0, d)))


# ----------------------------------------------------------------------- Pose


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates to parent coordinates."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(3)
        q = np.array(self.q, dtype=float).reshape(4)
        q = canonical_quat(q / np.sqrt(q @ q))
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @classmethod
    def _trusted(cls, t: np.ndarray, q: np.ndarray) -> "Pose":
        """Build from fresh arrays, renormalising q without validation."""
        w, x, y, z = q.tolist()
        n = (w * w + x * x + y * y + z * z) ** 0.5
        lead = next((c for c in (w, x, y, z) if c != 0.0), 1.0)
        if lead < 0.0:
            n = -n
        q = np.array([w / n, x / n, y / n, z / n])
        t.flags.writeable = False
        q.flags.writeable = False
        obj = object.__new__(cls)
        object.__setattr__(obj, "t", t)
        object.__setattr__(obj, "q", q)
        return obj

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.t

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        """Pose from a 4x4 (or 3x4) rigid matrix.

        An orthonormal rotation block is kept verbatim as ``R`` so exact
        inputs such as axis permutations stay exact.
        """
        m = np.asarray(m, dtype=float)
        rot = m[:3, :3]
        p = Pose(m[:3, 3], matrix_to_quat(rot))
        if np.allclose(rot @ rot.T, np.eye(3), atol=1e-12) and np.linalg.det(rot) > 0:
            R = rot.copy()
            R.flags.writeable = False
            p.__dict__["R"] = R
        return p

    def __eq__(self, other):
        return (
            isinstance(other, Pose)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.q, other.q)
        )

    def __hash__(self):
        return hash((self.t.tobytes(), self.q.tobytes()))


IDENTITY = Pose()


def translation(x: float, y: float, z: float) -> Pose:
    return Pose(np.array([x, y, z], dtype=float))


def compose(p1: Pose, p2: Pose) -> Pose:
    """Return ``p1 * p2`` (apply p2 first, then p1)."""
    return Pose._trusted(p1.t + p1.R.dot(p2.t), quat_mul(p1.q, p2.q))


def invert(p: Pose) -> Pose:
    qc = quat_conj(p.q)
    return Pose._trusted(-(p.R.T @ p.t), qc)


def pose_distance(p1: Pose, p2: Pose) -> tuple[float, float]:
    """(translation distance, rotation angle) between two poses."""
    return float(np.linalg.norm(p1.t - p2.t)), quat_angle(p1.q, p2.q)


# ---------------------------------------------------------------------- Hopf


def hopf_from_rotation(q, tol_pole: float = TOL_POLE):
    """Split a rotation into the image of the north pole and a residual angle.

    Accepts a single quaternion or an ``(n, 4)`` batch. The angle lies in
    ``[0, 2pi)`` and the result is identical for ``q`` and ``-q``.
    """
    q = canonical_quat(np.asarray(q, dtype=float))
    if q.ndim == 1:
        return _hopf_scalar(*q.tolist(), tol_pole)
    w, x, y, z = np.moveaxis(q, -1, 0)
    one_plus_c = 2.0 * (w * w + z * z)
    if np.any(one_plus_c <= tol_pole):
        raise SingularOrientation("rotation maps the north pole onto the south pole")
    eta = np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    phi = 2.0 * np.mod(np.arctan2(z, w), np.pi)
    phi = np.where(phi >= TWO_PI, phi - TWO_PI, phi)
    if np.ndim(phi) == 0:
        phi = float(phi)
    return eta, phi


def _hopf_scalar(w, x, y, z, tol_pole):
    if 2.0 * (w * w + z * z) <= tol_pole:
        raise SingularOrientation("rotation maps the north pole onto the south pole")
    eta = np.array([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)])
    phi = 2.0 * (math.atan2(z, w) % math.pi)
    if phi >= TWO_PI:
        phi -= TWO_PI
    return eta, phi


def rotation_from_hopf(eta, phi, tol_pole: float = TOL_POLE) -> np.ndarray:
    """Inverse of :func:`hopf_from_rotation`. Broadcasts over a leading axis."""
    eta = np.asarray(eta, dtype=float)
    a, b, c = np.moveaxis(eta, -1, 0)
    if np.any(c <= -1.0 + tol_pole):
        raise SingularOrientation("eta too close to the south pole")
    one_plus_c = 1.0 + c
    k = 1.0 / np.sqrt(2.0 * one_plus_c)
    half = 0.5 * np.asarray(phi, dtype=float)
    C, S = np.cos(half), np.sin(half)
    q = np.stack(
        [k * one_plus_c * C, k * (a * S - b * C), k * (a * C + b * S), k * one_plus_c * S],
        axis=-1,
    )
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return canonical_quat(q)


@dataclass(frozen=True)
class HopfContactCoords:
    a: float
    b: float
    z: float
    eta: np.ndarray
    phi: float

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(3)
        eta = eta / np.linalg.norm(eta)
        eta.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.a, self.b, self.z], self.eta, [self.phi]])

    def __eq__(self, other):
        return isinstance(other, HopfContactCoords) and np.array_equal(
            self.as_array(), other.as_array()
        )

    def __hash__(self):
        return hash(self.as_array().tobytes())


def xi(rel: Pose) -> HopfContactCoords:
    eta, phi = hopf_from_rotation(rel.q)
    return HopfContactCoords(rel.t[0], rel.t[1], rel.t[2], eta, phi)


def xi_inv(c: HopfContactCoords) -> Pose:
    return Pose(np.array([c.a, c.b, c.z]), rotation_from_hopf(c.eta, c.phi))


# --------------------------------------------------------------- contact faces


@dataclass(frozen=True)
class ContactPlane:
    face_id: int
    pose_in_object: Pose


def face_rotation(face_id: int) -> np.ndarray:
    n = FACE_NORMALS[face_id]
    x = FACE_XAXES[face_id]
    return np.column_stack([x, np.cross(n, x), n])


def cuboid_planes(lo, hi) -> tuple[ContactPlane, ...]:
    """Six face frames of the axis-aligned box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    centre = 0.5 * (lo + hi)
    planes = []
    for f in range(N_FACES):
        axis = f // 2
        origin = centre.copy()
        origin[axis] = hi[axis] if f % 2 else lo[axis]
        m = np.eye(4)
        m[:3, :3] = face_rotation(f)
        m[:3, 3] = origin
        planes.append(ContactPlane(f, Pose.from_matrix(m)))
    return tuple(planes)


# 180 degrees about the face x axis: turns the child face's outward normal
# to point into the parent face.
FLIP = Pose(np.zeros(3), np.array([0.0, 1.0, 0.0, 0.0]))


@dataclass(frozen=True)
class ContactParams:
    """Child face ``f`` rests on parent face ``fp`` with Hopf offsets."""

    f: int
    fp: int
    coords: HopfContactCoords

    def __post_init__(self):
        for face in (self.f, self.fp):
            if not (isinstance(face, (int, np.integer)) and 0 <= face < N_FACES):
                raise InvalidFace(f"face id {face!r} not in [0, 6)")
        object.__setattr__(self, "f", int(self.f))
        object.__setattr__(self, "fp", int(self.fp))


def contact_relative_pose(theta: ContactParams, parent_planes, child_planes) -> Pose:
    """Pose of the child object frame relative to the parent object frame."""
    for face in (theta.f, theta.fp):
        if not 0 <= face < N_FACES:
            raise InvalidFace(f"face id {face} not in [0, 6)")
    face_to_face = compose(xi_inv(theta.coords), FLIP)
    out = compose(parent_planes[theta.fp].pose_in_object, face_to_face)
    return compose(out, invert(child_planes[theta.f].pose_in_object))


def relative_face_pose(world_parent_face: Pose, world_child_face: Pose) -> Pose:
    """Child face relative to parent face, with the flush flip undone.

    ``xi`` of the result gives contact coordinates reproducing the child's
    world pose through :func:`contact_relative_pose`.
    """
    return compose(compose(invert(world_parent_face), world_child_face), FLIP)
