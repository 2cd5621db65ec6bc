"""Weak-perspective camera and spherical-harmonics Lambertian shading.

Conventions (see CONVENTIONS.md):

* model space is right-handed, y up, the face looks toward +z (the viewer);
* ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)``;
* image coordinates are ``u = f*(R v)_x + tx``, ``v = -f*(R v)_y + ty`` (y down);
* real SH, bands 0-2, no Condon-Shortley phase, order
  ``1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

SH_C0 = 0.5 / np.sqrt(np.pi)             # 0.28209479
SH_C1 = np.sqrt(3.0 / (4.0 * np.pi))     # 0.48860251
SH_C2 = 0.5 * np.sqrt(15.0 / np.pi)      # 1.09254843
SH_C3 = 0.25 * np.sqrt(5.0 / np.pi)      # 0.31539157
SH_C4 = 0.25 * np.sqrt(15.0 / np.pi)     # 0.54627422
N_SH = 9


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    f: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise SceneError("pose entries must be finite")
        if not self.f > 0:
            raise SceneError(f"scale f must be positive, got {self.f}")

    def as_array(self) -> np.ndarray:
        return np.array([self.pitch, self.yaw, self.roll, self.f, self.tx, self.ty], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Pose":
        a = [float(v) for v in arr]
        if len(a) != 6:
            raise SceneError(f"pose needs 6 values, got {len(a)}")
        return cls(*a)

    @property
    def t2d(self) -> np.ndarray:
        return np.array([self.tx, self.ty])


def rotation_matrix(pose: Pose) -> np.ndarray:
    cx, sx = np.cos(pose.pitch), np.sin(pose.pitch)
    cy, sy = np.cos(pose.yaw), np.sin(pose.yaw)
    cz, sz = np.cos(pose.roll), np.sin(pose.roll)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def _as_points(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim == 1:
        if v.size % 3:
            raise SceneError(f"flat vertex array length {v.size} is not a multiple of 3")
        v = v.reshape(-1, 3)
    if v.ndim != 2 or v.shape[1] != 3:
        raise SceneError(f"vertices must be (n, 3), got {v.shape}")
    return v


def project_points(vertices, pose: Pose) -> np.ndarray:
    """Weak-perspective projection to (n, 2) image coordinates."""
    v = _as_points(vertices)
    cam = v @ rotation_matrix(pose).T
    out = np.empty((len(v), 2))
    out[:, 0] = pose.f * cam[:, 0] + pose.tx
    out[:, 1] = -pose.f * cam[:, 1] + pose.ty
    return out


def sh_basis(normals, check: bool = True) -> np.ndarray:
    """Evaluate the 9 real SH basis functions. Accepts a single normal or an (n, 3) array."""
    n = np.asarray(normals, dtype=np.float64)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    if n.shape[1] != 3:
        raise SceneError(f"normals must have 3 components, got {n.shape}")
    if check and np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
        raise SceneError("sh_basis needs unit normals")
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    out = np.empty((len(n), N_SH))
    out[:, 0] = SH_C0
    out[:, 1] = SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = SH_C1 * x
    out[:, 4] = SH_C2 * x * y
    out[:, 5] = SH_C2 * y * z
    out[:, 6] = SH_C3 * (3.0 * z * z - 1.0)
    out[:, 7] = SH_C2 * x * z
    out[:, 8] = SH_C4 * (x * x - y * y)
    return out[0] if single else out


def as_illumination(gamma) -> np.ndarray:
    """Reshape SH coefficients to (channels, 9) with channels 1 or 3."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 1:
        if g.size not in (N_SH, 3 * N_SH):
            raise SceneError(f"illumination needs 9 or 27 coefficients, got {g.size}")
        g = g.reshape(-1, N_SH)
    if g.ndim != 2 or g.shape[1] != N_SH or g.shape[0] not in (1, 3):
        raise SceneError(f"illumination must be (1|3, 9), got {g.shape}")
    return g


def neutral_illumination(channels: int = 3) -> np.ndarray:
    """Constant unit irradiance: shading reproduces albedo."""
    g = np.zeros((channels, N_SH))
    g[:, 0] = 1.0 / SH_C0
    return g


def irradiance(basis: np.ndarray, gamma) -> np.ndarray:
    """Per-vertex, per-channel irradiance from precomputed SH basis values, shape (n, 3)."""
    g = as_illumination(gamma)
    irr = basis @ g.T
    if irr.shape[1] == 1:
        irr = np.repeat(irr, 3, axis=1)
    return irr


def shade(albedo, normals, gamma) -> np.ndarray:
    """Lambertian SH shading ``albedo * sum_b gamma_b * Phi_b(n)``; not clamped."""
    a = np.asarray(albedo, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if a.shape != n.shape:
        raise SceneError(f"albedo {a.shape} and normals {n.shape} are not aligned")
    return a * irradiance(sh_basis(n), gamma)


@numba.njit(cache=True, nogil=True)
def _vertex_normals(v, tris):
    acc = np.zeros_like(v)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        ux, uy, uz = v[i1, 0] - v[i0, 0], v[i1, 1] - v[i0, 1], v[i1, 2] - v[i0, 2]
        wx, wy, wz = v[i2, 0] - v[i0, 0], v[i2, 1] - v[i0, 1], v[i2, 2] - v[i0, 2]
        # cross product length is twice the area: area weighting for free
        nx, ny, nz = uy * wz - uz * wy, uz * wx - ux * wz, ux * wy - uy * wx
        for i in (i0, i1, i2):
            acc[i, 0] += nx
            acc[i, 1] += ny
            acc[i, 2] += nz
    for i in range(v.shape[0]):
        norm = np.sqrt(acc[i, 0] ** 2 + acc[i, 1] ** 2 + acc[i, 2] ** 2)
        if norm > 0.0:
            acc[i, 0] /= norm
            acc[i, 1] /= norm
            acc[i, 2] /= norm
        else:
            acc[i, 0], acc[i, 1], acc[i, 2] = 0.0, 0.0, 1.0
    return acc


def vertex_normals(vertices, triangles) -> np.ndarray:
    """Area-weighted vertex normals; vertices without area fall back to +z."""
    v = np.ascontiguousarray(_as_points(vertices))
    tri = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
    return _vertex_normals(v, tri)


@numba.njit(cache=True, nogil=True)
def _camera_kernel(v, tris, rot, f, tx, ty):
    normals = _vertex_normals(v, tris)
    n = v.shape[0]
    screen = np.empty((n, 2))
    depth = np.empty(n)
    sh = np.empty((n, N_SH))
    for i in range(n):
        cx = rot[0, 0] * v[i, 0] + rot[0, 1] * v[i, 1] + rot[0, 2] * v[i, 2]
        cy = rot[1, 0] * v[i, 0] + rot[1, 1] * v[i, 1] + rot[1, 2] * v[i, 2]
        cz = rot[2, 0] * v[i, 0] + rot[2, 1] * v[i, 1] + rot[2, 2] * v[i, 2]
        screen[i, 0] = f * cx + tx
        screen[i, 1] = -f * cy + ty
        depth[i] = -f * cz
        nx = rot[0, 0] * normals[i, 0] + rot[0, 1] * normals[i, 1] + rot[0, 2] * normals[i, 2]
        ny = rot[1, 0] * normals[i, 0] + rot[1, 1] * normals[i, 1] + rot[1, 2] * normals[i, 2]
        nz = rot[2, 0] * normals[i, 0] + rot[2, 1] * normals[i, 1] + rot[2, 2] * normals[i, 2]
        sh[i, 0] = SH_C0
        sh[i, 1] = SH_C1 * ny
        sh[i, 2] = SH_C1 * nz
        sh[i, 3] = SH_C1 * nx
        sh[i, 4] = SH_C2 * nx * ny
        sh[i, 5] = SH_C2 * ny * nz
        sh[i, 6] = SH_C3 * (3.0 * nz * nz - 1.0)
        sh[i, 7] = SH_C2 * nx * nz
        sh[i, 8] = SH_C4 * (nx * nx - ny * ny)
    return screen, depth, sh


def camera_space(vertices, triangles, pose: Pose):
    """Screen positions, depths and SH basis at camera-space vertex normals in one pass."""
    v = np.ascontiguousarray(_as_points(vertices))
    tri = np.asarray(triangles)
    if tri.dtype != np.int32:
        tri = tri.astype(np.int64)
    tri = np.ascontiguousarray(tri.reshape(-1, 3))
    return _camera_kernel(v, tri, rotation_matrix(pose), float(pose.f), float(pose.tx), float(pose.ty))
