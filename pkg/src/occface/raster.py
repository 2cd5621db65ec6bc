"""Z-buffered triangle rasterizer and OBJ mesh I/O.

Pixel ``(col, row)`` samples image point ``(col, row)``. Front faces are
counter-clockwise as seen by the viewer, so their signed area in y-down image
coordinates is negative; back faces are culled. Edge ownership follows a
top-left rule and exact depth ties go to the lower triangle index.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np

from . import labels as L
from .morphable import CoefficientVector, MorphableModel, assemble_albedo, assemble_shape
from .scene import Pose, camera_space, irradiance


class RenderError(ValueError):
    pass


@numba.njit(cache=True, nogil=True)
def _top_left(dx, dy):
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


@numba.njit(cache=True, nogil=True)
def _rasterize(screen, depth, tris, width, height):
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = screen[i0, 0], screen[i0, 1]
        x1, y1 = screen[i1, 0], screen[i1, 1]
        x2, y2 = screen[i2, 0], screen[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if not area < 0.0:
            continue  # back-facing or degenerate
        # swap to positive orientation: q0 = p0, q1 = p2, q2 = p1
        ax, ay, bx, by, cx, cy = x0, y0, x2, y2, x1, y1
        za, zb, zc = depth[i0], depth[i2], depth[i1]
        area = -area
        tl0 = _top_left(cx - bx, cy - by)
        tl1 = _top_left(ax - cx, ay - cy)
        tl2 = _top_left(bx - ax, by - ay)
        c_lo = max(0, int(np.ceil(min(ax, min(bx, cx)))))
        c_hi = min(width - 1, int(np.floor(max(ax, max(bx, cx)))))
        r_lo = max(0, int(np.ceil(min(ay, min(by, cy)))))
        r_hi = min(height - 1, int(np.floor(max(ay, max(by, cy)))))
        for r in range(r_lo, r_hi + 1):
            py = float(r)
            for c in range(c_lo, c_hi + 1):
                px = float(c)
                w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                if w0 < 0.0 or (w0 == 0.0 and not tl0):
                    continue
                w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if w1 < 0.0 or (w1 == 0.0 and not tl1):
                    continue
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if w2 < 0.0 or (w2 == 0.0 and not tl2):
                    continue
                b0, b1, b2 = w0 / area, w1 / area, w2 / area
                z = b0 * za + b1 * zb + b2 * zc
                if z < zbuf[r, c]:
                    zbuf[r, c] = z
                    tri_id[r, c] = t
                    # back to the triangle's own vertex order (p0, p1, p2)
                    bary[r, c, 0] = b0
                    bary[r, c, 1] = b2
                    bary[r, c, 2] = b1
    return tri_id, bary, zbuf


def rasterize(screen, depth, triangles, width: int, height: int):
    """Visibility pass: per-pixel triangle index (-1 = empty), barycentrics and depth."""
    if width < 1 or height < 1:
        raise RenderError(f"canvas must be at least 1x1, got {width}x{height}")
    return _rasterize(np.ascontiguousarray(screen, dtype=np.float64),
                      np.ascontiguousarray(depth, dtype=np.float64),
                      np.ascontiguousarray(triangles, dtype=np.int32),
                      int(width), int(height))


def triangle_regions(tags, triangles) -> np.ndarray:
    """Majority vertex tag per triangle; with three distinct tags the smallest ID wins."""
    t = np.asarray(tags)[np.asarray(triangles)]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    return np.where((a == b) | (a == c), a, np.where(b == c, b, np.minimum(a, np.minimum(b, c)))).astype(np.uint8)


@numba.njit(cache=True, nogil=True)
def _interpolate(tri_id, bary, tris, values):
    h, w = tri_id.shape
    k = values.shape[1]
    out = np.zeros((h, w, k))
    for r in range(h):
        for c in range(w):
            t = tri_id[r, c]
            if t < 0:
                continue
            i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
            b0, b1, b2 = bary[r, c, 0], bary[r, c, 1], bary[r, c, 2]
            for j in range(k):
                out[r, c, j] = b0 * values[i0, j] + b1 * values[i1, j] + b2 * values[i2, j]
    return out


def interpolate(tri_id, bary, triangles, values) -> np.ndarray:
    """Barycentric interpolation of per-vertex ``values`` (n, k) into an (H, W, k) image; empty pixels 0."""
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(len(values), -1)
    out = _interpolate(tri_id, bary, np.ascontiguousarray(triangles, dtype=np.int32),
                       np.ascontiguousarray(flat))
    return out.reshape(tri_id.shape + values.shape[1:])


@dataclass
class RenderBuffer:
    color: np.ndarray      # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W), +inf where empty
    region: np.ndarray     # (H, W) class IDs
    coverage: np.ndarray   # (H, W) bool
    tri_id: np.ndarray     # (H, W) int32, -1 where empty
    bary: np.ndarray       # (H, W, 3)

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @property
    def height(self) -> int:
        return self.color.shape[0]


@dataclass
class GeometryPass:
    """Everything that depends only on shape coefficients and pose."""

    vertices: np.ndarray     # (n, 3) model space
    screen: np.ndarray       # (n, 2)
    sh: np.ndarray           # (n, 9) SH basis at camera-space normals
    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray
    region: np.ndarray

    @property
    def coverage(self) -> np.ndarray:
        return self.tri_id >= 0


def geometry_pass(model: MorphableModel, alpha, pose: Pose, width: int, height: int,
                  tri_regions: np.ndarray | None = None) -> GeometryPass:
    if width < 1 or height < 1:
        raise RenderError(f"canvas must be at least 1x1, got {width}x{height}")
    verts = assemble_shape(model, alpha).reshape(-1, 3)
    screen, z, sh = camera_space(verts, model.triangles, pose)
    tri_id, bary, zbuf = rasterize(screen, z, model.triangles, width, height)
    if tri_regions is None:
        tri_regions = triangle_regions(model.region_tags, model.triangles)
    region = np.where(tri_id >= 0, tri_regions[np.maximum(tri_id, 0)], L.BACKGROUND).astype(np.uint8)
    return GeometryPass(verts, screen, sh, tri_id, bary, zbuf, region)


def vertex_colors(model: MorphableModel, sh: np.ndarray, beta, gamma) -> np.ndarray:
    """Shaded per-vertex colors, clamped to [0, 1]."""
    albedo = assemble_albedo(model, beta).values
    return np.clip(albedo * irradiance(sh, gamma), 0.0, 1.0)


def shade_pass(model: MorphableModel, geom: GeometryPass, beta, gamma) -> np.ndarray:
    colors = vertex_colors(model, geom.sh, beta, gamma)
    return interpolate(geom.tri_id, geom.bary, model.triangles, colors)


def render(model: MorphableModel, coeffs: CoefficientVector, width: int, height: int) -> RenderBuffer:
    geom = geometry_pass(model, coeffs.alpha, coeffs.pose_obj(), width, height)
    color = shade_pass(model, geom, coeffs.beta, coeffs.gamma)
    return RenderBuffer(color, geom.depth, geom.region, geom.coverage, geom.tri_id, geom.bary)


def face_region_mask(buffer: RenderBuffer) -> np.ndarray:
    return buffer.coverage.copy()


# ---------------------------------------------------------------------------
# OBJ


def write_obj(path, vertices, triangles, colors=None) -> None:
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    lines = []
    if colors is None:
        lines.extend("v %.6f %.6f %.6f" % tuple(p) for p in v)
    else:
        c = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        lines.extend("v %.6f %.6f %.6f %.6f %.6f %.6f" % (*p, *q) for p, q in zip(v, c))
    lines.extend("f %d %d %d" % tuple(t + 1) for t in np.asarray(triangles).reshape(-1, 3))
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write OBJ file {os.fspath(path)!r}: {exc.strerror}") from exc


def read_obj(path):
    """Read ``v`` (optionally with colors) and triangular ``f`` records. Returns (vertices, triangles, colors|None)."""
    verts, cols, faces = [], [], []
    try:
        fh = open(path, encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot read OBJ file {os.fspath(path)!r}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    nums = [float(x) for x in parts[1:]]
                    verts.append(nums[:3])
                    if len(nums) >= 6:
                        cols.append(nums[3:6])
                elif parts[0] == "f":
                    faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{os.fspath(path)}:{lineno}: malformed OBJ record") from exc
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    c = np.array(cols, dtype=np.float64).reshape(-1, 3) if len(cols) == len(verts) and cols else None
    return v, f, c


def export_obj(model: MorphableModel, coeffs: CoefficientVector, path) -> None:
    """Write the model-space shape with its (clamped) albedo as vertex colors."""
    verts = assemble_shape(model, coeffs.alpha)
    albedo = assemble_albedo(model, coeffs.beta).values
    write_obj(path, verts, model.triangles, albedo)
