"""Semantic label maps: landmark region fill, parsing-map completion, attention weights.

Class IDs follow the fixed label table below. Pixel ``(col, row)`` samples the
point ``(x=col, y=row)`` in image coordinates (y grows downward).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKGROUND = 0
SKIN = 1
LEFT_BROW = 2
RIGHT_BROW = 3
LEFT_EYE = 4
RIGHT_EYE = 5
NOSE = 6
UPPER_LIP = 7
LOWER_LIP = 8
MOUTH_INTERIOR = 9
HAIR = 10
OCCLUDER = 11

LABEL_NAMES = {
    BACKGROUND: "background",
    SKIN: "skin",
    LEFT_BROW: "left_brow",
    RIGHT_BROW: "right_brow",
    LEFT_EYE: "left_eye",
    RIGHT_EYE: "right_eye",
    NOSE: "nose",
    UPPER_LIP: "upper_lip",
    LOWER_LIP: "lower_lip",
    MOUTH_INTERIOR: "mouth_interior",
    HAIR: "hair",
    OCCLUDER: "occluder",
}
N_CLASSES = len(LABEL_NAMES)

N_LANDMARKS = 68

# landmark index groups (iBUG 68); "left" means image-left
JAW = tuple(range(0, 17))
LEFT_BROW_IDX = tuple(range(17, 22))
RIGHT_BROW_IDX = tuple(range(22, 27))
NOSE_IDX = tuple(range(27, 36))
LEFT_EYE_IDX = tuple(range(36, 42))
RIGHT_EYE_IDX = tuple(range(42, 48))
OUTER_LIPS_IDX = tuple(range(48, 60))
INNER_LIPS_IDX = tuple(range(60, 68))


class LabelError(ValueError):
    """Invalid label map, landmark set or class-set configuration."""


@dataclass(frozen=True)
class LabelClassSets:
    """Skin classes ``skin`` (O) and facial-feature classes ``features`` (S)."""

    skin: frozenset = field(default_factory=lambda: frozenset({SKIN}))
    features: frozenset = field(
        default_factory=lambda: frozenset(
            {LEFT_BROW, RIGHT_BROW, LEFT_EYE, RIGHT_EYE, NOSE, UPPER_LIP, LOWER_LIP}
        )
    )

    def __post_init__(self):
        object.__setattr__(self, "skin", frozenset(int(c) for c in self.skin))
        object.__setattr__(self, "features", frozenset(int(c) for c in self.features))
        if self.skin & self.features:
            raise LabelError("skin and feature class sets overlap")
        if BACKGROUND in self.skin or BACKGROUND in self.features:
            raise LabelError("class sets must not contain the background ID")
        for c in self.skin | self.features:
            if c not in LABEL_NAMES:
                raise LabelError(f"unknown class ID {c}")

    @property
    def facial(self) -> frozenset:
        return self.skin | self.features


def validate_label_map(labels: np.ndarray) -> np.ndarray:
    """Return ``labels`` as a 2-D uint8 array, raising if it breaks the label table."""
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise LabelError(f"label map must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype.kind not in "iu":
        raise LabelError(f"label map must hold integer class IDs, got {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise LabelError("label map holds values outside the label table")
    return arr.astype(np.uint8, copy=False)


def validate_landmarks(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise LabelError(f"expected {N_LANDMARKS} landmarks of 2 coordinates, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise LabelError("landmark coordinates must be finite")
    return pts


# ---------------------------------------------------------------------------
# polygon fill


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, no repeated endpoint."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64))))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def fill_polygon(poly, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon onto a ``height x width`` mask.

    A pixel is set when its sample point is inside by the even-odd rule or lies
    on an edge. Polygons whose points are all collinear fill nothing.
    """
    poly = np.asarray(poly, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if _collinear(poly):
        return mask
    xi, yi = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xi, -1), np.roll(yi, -1)

    row_lo = max(0, int(np.ceil(yi.min())))
    row_hi = min(height - 1, int(np.floor(yi.max())))
    for row in range(row_lo, row_hi + 1):
        y = float(row)
        hit = (yi > y) != (yj > y)
        if np.any(hit):
            xs = np.sort(xi[hit] + (y - yi[hit]) * (xj[hit] - xi[hit]) / (yj[hit] - yi[hit]))
            for x0, x1 in zip(xs[0::2], xs[1::2]):
                c0 = max(0, int(np.ceil(x0)))
                c1 = min(width, int(np.ceil(x1)))
                if c1 > c0:
                    mask[row, c0:c1] = True
    _mark_edges(mask, xi, yi, xj, yj)
    return mask


def _collinear(poly: np.ndarray) -> bool:
    d = poly - poly[0]
    nz = np.flatnonzero(np.any(d != 0.0, axis=1))
    if len(poly) < 3 or nz.size == 0:
        return True
    ref = d[nz[0]]
    return bool(np.all(ref[0] * d[:, 1] - ref[1] * d[:, 0] == 0.0))


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd containment (edges included) of arbitrary points; collinear polygons contain nothing."""
    pts = np.asarray(points, dtype=np.float64)
    poly = np.asarray(poly, dtype=np.float64)
    inside = np.zeros(len(pts), dtype=bool)
    if _collinear(poly):
        return inside
    px, py = pts[:, 0], pts[:, 1]
    on_edge = np.zeros(len(pts), dtype=bool)
    for (x0, y0), (x1, y1) in zip(poly, np.roll(poly, -1, axis=0)):
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xc)
        on = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) == 0.0) & (
            (px >= min(x0, x1)) & (px <= max(x0, x1)) & (py >= min(y0, y1)) & (py <= max(y0, y1)))
        on_edge |= on
    return inside | on_edge


def _mark_edges(mask, xi, yi, xj, yj):
    height, width = mask.shape
    for x0, y0, x1, y1 in zip(xi, yi, xj, yj):
        c_lo = max(0, int(np.ceil(min(x0, x1))))
        c_hi = min(width - 1, int(np.floor(max(x0, x1))))
        r_lo = max(0, int(np.ceil(min(y0, y1))))
        r_hi = min(height - 1, int(np.floor(max(y0, y1))))
        if c_lo > c_hi or r_lo > r_hi:
            continue
        cols = np.arange(c_lo, c_hi + 1, dtype=np.float64)
        rows = np.arange(r_lo, r_hi + 1, dtype=np.float64)[:, None]
        on = (x1 - x0) * (rows - y0) - (y1 - y0) * (cols - x0) == 0.0
        mask[r_lo:r_hi + 1, c_lo:c_hi + 1] |= on


# ---------------------------------------------------------------------------
# operations


def regions_from_landmarks(lmk, width: int, height: int) -> np.ndarray:
    """Rasterize the landmark-derived feature map.

    Skin is the convex hull of jaw and brow points; brows, eyes, nose and the
    outer lip ring are painted over it in that order. Lip pixels on or above the
    line through the mouth corners are upper lip, the rest lower lip; the inner
    lip ring is painted as mouth interior.
    """
    if width < 1 or height < 1:
        raise LabelError(f"canvas must be at least 1x1, got {width}x{height}")
    pts = validate_landmarks(lmk)
    out = np.zeros((height, width), dtype=np.uint8)

    def paint(idx, cls):
        out[fill_polygon(pts[list(idx)], width, height)] = cls

    hull = convex_hull(pts[list(JAW + LEFT_BROW_IDX + RIGHT_BROW_IDX)])
    out[fill_polygon(hull, width, height)] = SKIN
    paint(LEFT_BROW_IDX, LEFT_BROW)
    paint(RIGHT_BROW_IDX, RIGHT_BROW)
    paint(LEFT_EYE_IDX, LEFT_EYE)
    paint(RIGHT_EYE_IDX, RIGHT_EYE)
    paint(NOSE_IDX, NOSE)

    lips = fill_polygon(pts[list(OUTER_LIPS_IDX)], width, height)
    if lips.any():
        (ax, ay), (bx, by) = pts[48], pts[54]
        rows, cols = np.nonzero(lips)
        # sign of the cross product tells which side of the corner line a pixel is on
        side = (bx - ax) * (rows - ay) - (by - ay) * (cols - ax)
        above = side <= 0 if bx >= ax else side >= 0
        out[rows, cols] = np.where(above, UPPER_LIP, LOWER_LIP)
    paint(INNER_LIPS_IDX, MOUTH_INTERIOR)
    return out


def merge_maps(a, b, sets: LabelClassSets | None = None, literal: bool = False) -> np.ndarray:
    """Complete parsing map ``a`` with landmark map ``b`` (skin pass, then feature pass).

    In the feature pass a pixel where neither map holds a feature class keeps its
    skin-pass value. ``literal=True`` instead resets such pixels to ``a``, which
    discards skin recovered from ``b``.
    """
    sets = sets or LabelClassSets()
    a = validate_label_map(a)
    b = validate_label_map(b)
    if a.shape != b.shape:
        raise LabelError(f"label maps differ in size: {a.shape} vs {b.shape}")
    skin = np.array(sorted(sets.skin), dtype=np.uint8)
    feat = np.array(sorted(sets.features), dtype=np.uint8)
    a_skin, b_skin = np.isin(a, skin), np.isin(b, skin)
    a_feat, b_feat = np.isin(a, feat), np.isin(b, feat)

    c = np.where(a_skin, a, np.where(b_skin, b, a))
    fallback = a if literal else c
    return np.where(a_feat, a, np.where(b_feat, b, fallback)).astype(np.uint8)


def occlusion_attention(m_alpha, sets: LabelClassSets | None = None,
                        inside: float = 1.0, outside: float = 0.1) -> np.ndarray:
    """Per-pixel photometric weights: ``inside`` on skin/feature pixels, ``outside`` elsewhere."""
    sets = sets or LabelClassSets()
    m = validate_label_map(m_alpha)
    facial = np.isin(m, np.array(sorted(sets.facial), dtype=np.uint8))
    return np.where(facial, inside, outside).astype(np.float64)


# ---------------------------------------------------------------------------
# canonical landmark layout, y up, roughly unit half-width


def face_template() -> np.ndarray:
    """A regular 68-point face layout in normalized coordinates (x right, y up)."""
    t = np.pi + np.arange(17) * np.pi / 16
    jaw = np.stack([0.92 * np.cos(t), 0.2 + 1.15 * np.sin(t)], axis=1)
    bx = np.linspace(-0.78, -0.22, 5)
    brow_l = np.stack([bx, 0.5 + 0.12 * np.sin(np.linspace(0.2, np.pi - 0.2, 5))], axis=1)
    brow_r = brow_l[::-1] * np.array([-1.0, 1.0])
    nose = [(0.0, 0.32), (0.0, 0.18), (0.0, 0.03), (0.0, -0.12),
            (-0.22, -0.26), (-0.11, -0.3), (0.0, -0.33), (0.11, -0.3), (0.22, -0.26)]
    eye_l = [(-0.62, 0.22), (-0.52, 0.29), (-0.38, 0.29), (-0.28, 0.22), (-0.38, 0.15), (-0.52, 0.15)]
    eye_r = [(0.28, 0.22), (0.38, 0.29), (0.52, 0.29), (0.62, 0.22), (0.52, 0.15), (0.38, 0.15)]
    lips_out = [(-0.36, -0.55), (-0.23, -0.46), (-0.1, -0.43), (0.0, -0.45), (0.1, -0.43),
                (0.23, -0.46), (0.36, -0.55), (0.23, -0.67), (0.1, -0.71), (0.0, -0.72),
                (-0.1, -0.71), (-0.23, -0.67)]
    lips_in = [(-0.29, -0.55), (-0.1, -0.52), (0.0, -0.53), (0.1, -0.52),
               (0.29, -0.55), (0.1, -0.59), (0.0, -0.6), (-0.1, -0.59)]
    pts = np.concatenate([jaw, brow_l, brow_r, nose, eye_l, eye_r, lips_out, lips_in]).astype(np.float64)
    assert pts.shape == (N_LANDMARKS, 2)
    return pts


def template_landmarks(center=(32.0, 32.0), scale: float = 24.0) -> np.ndarray:
    """``face_template`` placed on an image canvas (y down)."""
    tpl = face_template()
    return np.stack([center[0] + scale * tpl[:, 0], center[1] - scale * tpl[:, 1]], axis=1)
