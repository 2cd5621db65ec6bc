"""Seeded synthetic scenes: sampled coefficients, clean/occluded renders, parsing map, landmarks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import labels as L
from .morphable import CoefficientVector, MorphableModel, assemble_shape
from .raster import RenderBuffer, render
from .scene import N_SH, SH_C0, project_points

OCCLUDER_KINDS = ("none", "bar", "disc", "hand_silhouette")

SIGMA_ALPHA = 0.5
SIGMA_BETA = 0.3
MAX_TILT = np.deg2rad(20.0)     # pitch and yaw
MAX_ROLL = np.deg2rad(10.0)

# saturated colors well away from the skin albedo range
OCCLUDER_COLORS = ((0.10, 0.25, 0.90), (0.10, 0.80, 0.20), (0.85, 0.10, 0.80), (0.05, 0.70, 0.85))


class SynthError(ValueError):
    pass


@dataclass
class SyntheticScene:
    coeffs: CoefficientVector
    clean: np.ndarray            # (H, W, 3) float in [0, 1]
    occluded: np.ndarray
    m_alpha: np.ndarray          # (H, W) uint8
    landmarks: np.ndarray        # (68, 2)
    occluder: dict = field(default_factory=dict)
    footprint: np.ndarray | None = None
    buffer: RenderBuffer | None = None

    @property
    def width(self) -> int:
        return self.clean.shape[1]

    @property
    def height(self) -> int:
        return self.clean.shape[0]


def sample_coefficients(model: MorphableModel, rng: np.random.Generator, width: int, height: int,
                        gamma_size: int = 3 * N_SH) -> CoefficientVector:
    alpha = rng.normal(0.0, SIGMA_ALPHA, model.n_alpha)
    beta = rng.normal(0.0, SIGMA_BETA, model.n_beta)
    base = np.zeros(N_SH)
    base[0] = rng.uniform(0.8, 1.05) / SH_C0
    base[1:] = rng.normal(0.0, 0.25, N_SH - 1)
    channels = 3 if gamma_size == 3 * N_SH else 1
    gamma = np.tile(base, (channels, 1))
    if channels == 3:
        gamma *= 1.0 + rng.normal(0.0, 0.05, (3, 1))
    pitch, yaw = rng.uniform(-MAX_TILT, MAX_TILT, 2)
    roll = rng.uniform(-MAX_ROLL, MAX_ROLL)
    f = 0.33 * min(width, height) * rng.uniform(0.92, 1.08)
    tx, ty = width / 2 + rng.uniform(-4, 4), height / 2 + rng.uniform(-4, 4)
    return CoefficientVector(alpha, beta, gamma.ravel(), [pitch, yaw, roll, f, tx, ty])


def true_landmarks(model: MorphableModel, coeffs: CoefficientVector) -> np.ndarray:
    verts = assemble_shape(model, coeffs.alpha).reshape(-1, 3)
    return project_points(verts[model.landmark_indices], coeffs.pose_obj())


def _shape_mask(kind: str, center, scale: float, width: int, height: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = center
    dx, dy = cols - cx, rows - cy
    if kind == "disc":
        return dx * dx + dy * dy <= scale * scale
    if kind == "bar":
        # horizontal band, 3:1 half-extents
        return (np.abs(dy) <= scale) & (np.abs(dx) <= 3.0 * scale)
    if kind == "hand_silhouette":
        palm = (dx / scale) ** 2 + ((dy - 0.4 * scale) / (1.2 * scale)) ** 2 <= 1.0
        mask = palm
        for k, off in enumerate((-0.66, -0.22, 0.22, 0.66)):
            length = (1.3, 1.6, 1.5, 1.15)[k] * scale
            fx = dx - off * scale
            fy = dy + 0.4 * scale
            finger = (np.abs(fx) <= 0.17 * scale) & (fy <= 0) & (fy >= -length)
            mask = mask | finger
        thumb = ((dx + 1.05 * scale) / (0.2 * scale)) ** 2 + ((dy - 0.1 * scale) / (0.6 * scale)) ** 2 <= 1.0
        return mask | thumb
    raise SynthError(f"unknown occluder kind {kind!r}")


def occluder_footprint(kind: str, center, target: float, width: int, height: int):
    """Scale the occluder shape so its on-canvas pixel count is as close to ``target`` as bisection gets."""
    lo, hi = 0.0, float(max(width, height))
    best = None
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        m = _shape_mask(kind, center, mid, width, height)
        n = int(m.sum())
        if best is None or abs(n - target) < abs(best[1].sum() - target):
            best = (mid, m)
        if n < target:
            lo = mid
        else:
            hi = mid
    return best


def make_scene(model: MorphableModel, seed: int, occluder_kind: str = "none", occluder_fraction: float = 0.2,
               width: int = 128, height: int = 128, gamma_size: int = 3 * N_SH) -> SyntheticScene:
    if occluder_kind not in OCCLUDER_KINDS:
        raise SynthError(f"occluder kind must be one of {OCCLUDER_KINDS}, got {occluder_kind!r}")
    if not 0.0 <= occluder_fraction <= 0.5:
        raise SynthError(f"occluder fraction must lie in [0, 0.5], got {occluder_fraction}")
    rng = np.random.default_rng(seed)
    coeffs = sample_coefficients(model, rng, width, height, gamma_size)
    buf = render(model, coeffs, width, height)
    clean = buf.color
    m_alpha = buf.region.copy()
    occluded = clean.copy()
    info = {"kind": occluder_kind, "fraction": float(occluder_fraction), "pixel_count": 0}
    footprint = np.zeros((height, width), dtype=bool)

    coverage = int(buf.coverage.sum())
    if occluder_kind != "none" and occluder_fraction > 0 and coverage > 0:
        rows, cols = np.nonzero(buf.coverage)
        centroid = np.array([cols.mean(), rows.mean()])
        radius = np.sqrt(coverage / np.pi)
        center = centroid + rng.uniform(-0.35, 0.35, 2) * radius
        color = np.array(OCCLUDER_COLORS[rng.integers(len(OCCLUDER_COLORS))])
        scale, footprint = occluder_footprint(occluder_kind, center, occluder_fraction * coverage, width, height)
        occluded[footprint] = color
        m_alpha[footprint] = L.OCCLUDER
        info.update(center=[float(center[0]), float(center[1])], scale=float(scale),
                    color=[float(c) for c in color], pixel_count=int(footprint.sum()),
                    face_coverage=coverage)
    else:
        info["face_coverage"] = coverage
    return SyntheticScene(coeffs, clean, occluded, m_alpha, true_landmarks(model, coeffs),
                          info, footprint, buf)
