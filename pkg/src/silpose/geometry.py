"""Quaternions, the augmented weak-perspective camera, and triangle meshes.

Conventions
-----------
Quaternions are stored ``(w, x, y, z)``. The camera frame is right-handed
with +x to the right, +y down and +z pointing away from the viewer, so a
larger depth is farther away and the perspective term shrinks it. Screen
coordinates live in ``[-1, 1]^2`` and map to continuous pixel coordinates
by ``(x + 1) / 2 * W``; pixel ``i`` has its center at ``i + 0.5``.

Template frame: +y is up, +z is the object's front, so the template seen at
azimuth 0 and elevation 0 shows its front, upright.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PoleCrossing

N_CAMERA_PARAMS = 8
PARAM_NAMES = ("qw", "qx", "qy", "qz", "s", "tx", "ty", "z0")

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
# 180 deg about x: template up (+y) -> image up (-y), front (+z) -> viewer (-z)
_FLIP_QUAT = np.array([0.0, 1.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    return np.concatenate(
        [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
    )


def quat_to_matrix(q):
    """Rotation matrix of ``q`` (normalized first)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _rotation_jacobian(q):
    """dR/dq_i for the raw (unnormalized) quaternion, shape (4, 3, 3).

    The rotation is R(q / |q|), so the radial direction has zero derivative.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    w, x, y, z = q / n
    # derivatives w.r.t. the components of the unit quaternion
    dw = 2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    dx = 2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]])
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]])
    d_unit = np.stack([dw, dx, dy, dz])
    u = np.array([w, x, y, z])
    proj = (np.eye(4) - np.outer(u, u)) / n
    return np.einsum("ji,jab->iab", proj, d_unit)


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` (..., 3) by quaternion ``q``; ``q`` is normalized on input."""
    return np.asarray(v, dtype=np.float64) @ quat_to_matrix(q).T


def geodesic_distance(p, q):
    """Cosine distance ``1 - (p . q)^2`` between rotations, in [0, 1].

    Broadcasts over leading axes.
    """
    p = quat_normalize(p)
    q = quat_normalize(q)
    dot = np.sum(p * q, axis=-1)
    return np.clip(1.0 - dot * dot, 0.0, 1.0)


def quat_from_view(azimuth_deg, elevation_deg):
    """Camera rotation viewing the template from the given azimuth/elevation.

    Azimuth rotates the object about its up axis, positive elevation looks
    down on it from above.
    """
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    q_az = quat_from_axis_angle([0.0, 1.0, 0.0], az)
    q_el = quat_from_axis_angle([1.0, 0.0, 0.0], el)
    q = quat_mul(_FLIP_QUAT, quat_mul(q_el, q_az))
    # canonical sign: w >= 0
    return q if q[0] >= 0 else -q


def profile_quats():
    """The left and right profile rotations (azimuth +-90, elevation 0)."""
    return np.stack([quat_from_view(90.0, 0.0), quat_from_view(-90.0, 0.0)])


@dataclass
class CameraPose:
    """Augmented weak-perspective camera: rotation, scale, shift, perspective."""

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    s: float = 1.0
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))
    z0: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(2)
        self.s = float(self.s)
        self.z0 = float(self.z0)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, [self.s], self.t, [self.z0]])

    @classmethod
    def from_vector(cls, theta) -> "CameraPose":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(q=theta[0:4], s=theta[4], t=theta[5:7], z0=theta[7])

    def normalized(self) -> "CameraPose":
        return CameraPose(q=quat_normalize(self.q), s=self.s, t=self.t.copy(), z0=self.z0)

    def copy(self) -> "CameraPose":
        return CameraPose(q=self.q.copy(), s=self.s, t=self.t.copy(), z0=self.z0)


def project(pose: CameraPose, vertices, with_tangents: bool = False):
    """Project vertices into screen space.

    Returns ``(xy, depth)`` with ``xy`` of shape (N, 2) in screen units, and
    additionally ``dxy`` of shape (N, 2, 8) -- the derivatives of ``xy`` with
    respect to ``(qw, qx, qy, qz, s, tx, ty, z0)`` -- when ``with_tangents``.

    ``p = s * (v'_x, v'_y) / (1 + z0 * v'_z) + t`` with ``v' = R(q) v``.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    R = quat_to_matrix(pose.q)
    vr = v @ R.T
    den = 1.0 + pose.z0 * vr[:, 2]
    if v.shape[0] and np.any(den <= 0.0):
        raise PoleCrossing(
            f"1 + z0*z <= 0 for {int(np.sum(den <= 0))} vertices (z0={pose.z0:.4g})"
        )
    inv = 1.0 / den
    xy = pose.s * vr[:, :2] * inv[:, None] + pose.t
    depth = vr[:, 2]
    if not with_tangents:
        return xy, depth

    n = v.shape[0]
    dxy = np.zeros((n, 2, N_CAMERA_PARAMS))
    dR = _rotation_jacobian(pose.q)
    dvr = (v @ dR.reshape(12, 3).T).reshape(n, 4, 3).transpose(0, 2, 1)  # (N, 3, 4)
    # quotient rule on s * v'_xy / den
    dden = pose.z0 * dvr[:, 2, :]  # (N, 4)
    dxy[:, :, 0:4] = pose.s * (
        dvr[:, :2, :] * inv[:, None, None]
        - vr[:, :2, None] * (dden * inv[:, None] ** 2)[:, None, :]
    )
    dxy[:, :, 4] = vr[:, :2] * inv[:, None]
    dxy[:, 0, 5] = 1.0
    dxy[:, 1, 6] = 1.0
    dxy[:, :, 7] = -pose.s * vr[:, :2] * (vr[:, 2] * inv**2)[:, None]
    return xy, depth, dxy


@dataclass
class Mesh:
    """Triangle mesh; ``grid_dims`` is set for sphere-grid templates."""

    vertices: np.ndarray
    faces: np.ndarray
    grid_dims: tuple[int, int] | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face (repeated vertex index)")
        if self.grid_dims is not None:
            u, w = self.grid_dims
            if u * w != len(self.vertices):
                raise ValueError("grid_dims inconsistent with vertex count")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def bounding_radius(self) -> float:
        if not len(self.vertices):
            return 0.0
        center = 0.5 * (self.vertices.min(0) + self.vertices.max(0))
        return float(np.linalg.norm(self.vertices - center, axis=1).max())

    def normalized(self) -> "Mesh":
        """Copy centered on its bounding box and scaled to unit radius."""
        center = 0.5 * (self.vertices.min(0) + self.vertices.max(0))
        v = self.vertices - center
        r = np.linalg.norm(v, axis=1).max()
        return Mesh(v / r, self.faces.copy(), self.grid_dims)


def load_obj(path) -> Mesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return Mesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: Mesh, path, vertex_colors=None) -> None:
    """Write an OBJ; optional (N, 3) colors in [0, 1] go on the ``v`` lines."""
    lines = []
    for i, v in enumerate(mesh.vertices):
        if vertex_colors is None:
            lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        else:
            c = vertex_colors[i]
            lines.append(
                f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}"
            )
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")
