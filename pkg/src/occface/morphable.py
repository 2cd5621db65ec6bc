"""Linear morphable face model: mean + orthonormal bases, coefficient vectors, synthetic model."""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import labels as L
from .scene import N_SH, Pose, neutral_illumination

MODEL_FORMAT = "occface-morphable-model"
MODEL_FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean_shape: np.ndarray
    shape_basis: np.ndarray
    mean_albedo: np.ndarray
    albedo_basis: np.ndarray
    triangles: np.ndarray
    landmark_indices: np.ndarray
    region_tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean_shape", _frozen(self.mean_shape, np.float64).ravel())
        object.__setattr__(self, "mean_albedo", _frozen(self.mean_albedo, np.float64).ravel())
        object.__setattr__(self, "shape_basis", _frozen(self.shape_basis, np.float64))
        object.__setattr__(self, "albedo_basis", _frozen(self.albedo_basis, np.float64))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int32).reshape(-1, 3))
        object.__setattr__(self, "landmark_indices", _frozen(self.landmark_indices, np.int64))
        object.__setattr__(self, "region_tags", _frozen(self.region_tags, np.uint8))
        n3 = self.mean_shape.size
        if n3 % 3 or n3 == 0:
            raise ModelError("mean shape length must be a positive multiple of 3")
        n = n3 // 3
        if self.shape_basis.ndim != 2 or self.shape_basis.shape[0] != n3:
            raise ModelError(f"shape basis must be ({n3}, n_alpha), got {self.shape_basis.shape}")
        if self.albedo_basis.ndim != 2 or self.albedo_basis.shape[0] != n3:
            raise ModelError(f"albedo basis must be ({n3}, n_beta), got {self.albedo_basis.shape}")
        if self.mean_albedo.size != n3:
            raise ModelError("mean albedo must match the mean shape length")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ModelError("triangle index out of range")
        lmk = self.landmark_indices
        if lmk.shape != (L.N_LANDMARKS,) or len(set(lmk.tolist())) != L.N_LANDMARKS:
            raise ModelError("need 68 distinct landmark vertex indices")
        if lmk.min() < 0 or lmk.max() >= n:
            raise ModelError("landmark index out of range")
        if self.region_tags.shape != (n,):
            raise ModelError("need one region tag per vertex")
        allowed = {L.BACKGROUND} | L.LabelClassSets().facial
        if not set(np.unique(self.region_tags).tolist()) <= allowed:
            raise ModelError("region tags must be background, skin or facial-feature classes")

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    @property
    def n_alpha(self) -> int:
        return self.shape_basis.shape[1]

    @property
    def n_beta(self) -> int:
        return self.albedo_basis.shape[1]

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        def enc(arr, dtype):
            return base64.b64encode(np.ascontiguousarray(arr, dtype=dtype).tobytes()).decode("ascii")

        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "n_vertices": self.n_vertices,
            "n_alpha": self.n_alpha,
            "n_beta": self.n_beta,
            "n_triangles": len(self.triangles),
            "arrays": {
                "mean_shape": enc(self.mean_shape, "<f8"),
                "shape_basis": enc(self.shape_basis, "<f8"),
                "mean_albedo": enc(self.mean_albedo, "<f8"),
                "albedo_basis": enc(self.albedo_basis, "<f8"),
                "triangles": enc(self.triangles, "<i4"),
                "landmark_indices": enc(self.landmark_indices, "<i8"),
                "region_tags": enc(self.region_tags, "u1"),
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MorphableModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_FORMAT_VERSION:
            raise ModelError("not a morphable model file of a supported version")
        n, na, nb = doc["n_vertices"], doc["n_alpha"], doc["n_beta"]
        arrs = doc["arrays"]

        def dec(key, dtype, shape):
            raw = np.frombuffer(base64.b64decode(arrs[key]), dtype=dtype)
            return raw.reshape(shape).astype(np.dtype(dtype).newbyteorder("="))

        return cls(
            mean_shape=dec("mean_shape", "<f8", (3 * n,)),
            shape_basis=dec("shape_basis", "<f8", (3 * n, na)),
            mean_albedo=dec("mean_albedo", "<f8", (3 * n,)),
            albedo_basis=dec("albedo_basis", "<f8", (3 * n, nb)),
            triangles=dec("triangles", "<i4", (doc["n_triangles"], 3)),
            landmark_indices=dec("landmark_indices", "<i8", (L.N_LANDMARKS,)),
            region_tags=dec("region_tags", "u1", (n,)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "MorphableModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass
class CoefficientVector:
    """Fit state: shape ``alpha``, albedo ``beta``, SH ``gamma`` (9 or 27) and 6 pose values."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    pose: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).ravel().copy()
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel().copy()
        self.gamma = np.asarray(self.gamma, dtype=np.float64).ravel().copy()
        self.pose = np.asarray(self.pose, dtype=np.float64).ravel().copy()
        if self.gamma.size not in (N_SH, 3 * N_SH):
            raise ModelError(f"gamma needs 9 or 27 entries, got {self.gamma.size}")
        if self.pose.size != 6:
            raise ModelError(f"pose needs 6 entries, got {self.pose.size}")
        if not np.all(np.isfinite(self.as_array())):
            raise ModelError("coefficients must be finite")
        if not self.pose[3] > 0:
            raise ModelError(f"scale f must be positive, got {self.pose[3]}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.alpha.size, self.beta.size, self.gamma.size

    @property
    def size(self) -> int:
        return sum(self.dims) + 6

    def pose_obj(self) -> Pose:
        return Pose.from_array(self.pose)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma, self.pose])

    @classmethod
    def from_array(cls, arr, dims) -> "CoefficientVector":
        na, nb, ng = dims
        a = np.asarray(arr, dtype=np.float64)
        if a.size != na + nb + ng + 6:
            raise ModelError(f"coefficient vector of length {a.size} does not match dims {dims}")
        return cls(a[:na], a[na:na + nb], a[na + nb:na + nb + ng], a[na + nb + ng:])

    @classmethod
    def neutral(cls, model: MorphableModel, pose: Pose, gamma_size: int = 3 * N_SH) -> "CoefficientVector":
        gamma = neutral_illumination(3 if gamma_size == 3 * N_SH else 1).ravel()
        return cls(np.zeros(model.n_alpha), np.zeros(model.n_beta), gamma, pose.as_array())

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "gamma": self.gamma.tolist(), "pose": self.pose.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientVector":
        return cls(d["alpha"], d["beta"], d["gamma"], d["pose"])


class AlbedoArray(NamedTuple):
    values: np.ndarray    # (n, 3) clamped to [0, 1]
    raw: np.ndarray       # (n, 3) before clamping
    clamped: np.ndarray   # (n, 3) bool, entries changed by the clamp


def assemble_shape(model: MorphableModel, alpha) -> np.ndarray:
    """``mean_shape + shape_basis @ alpha`` as a flat array of length 3n."""
    a = np.asarray(alpha, dtype=np.float64).ravel()
    if a.size != model.n_alpha:
        raise ModelError(f"expected {model.n_alpha} shape coefficients, got {a.size}")
    return model.mean_shape + model.shape_basis @ a


def assemble_albedo(model: MorphableModel, beta) -> AlbedoArray:
    b = np.asarray(beta, dtype=np.float64).ravel()
    if b.size != model.n_beta:
        raise ModelError(f"expected {model.n_beta} albedo coefficients, got {b.size}")
    raw = (model.mean_albedo + model.albedo_basis @ b).reshape(-1, 3)
    values = np.clip(raw, 0.0, 1.0)
    return AlbedoArray(values, raw, values != raw)


# ---------------------------------------------------------------------------
# synthetic model

HEAD_AXES = (0.95, 1.25, 0.9)       # ellipsoid semi-axes x, y, z (model units)
TEMPLATE_SCALE = 0.85               # template unit -> model units
TEMPLATE_Y_OFFSET = 0.1

_REGION_ALBEDO = {
    L.SKIN: (0.80, 0.60, 0.50),
    L.LEFT_BROW: (0.30, 0.20, 0.15),
    L.RIGHT_BROW: (0.30, 0.20, 0.15),
    L.LEFT_EYE: (0.92, 0.92, 0.90),
    L.RIGHT_EYE: (0.92, 0.92, 0.90),
    L.NOSE: (0.82, 0.58, 0.48),
    L.UPPER_LIP: (0.72, 0.36, 0.36),
    L.LOWER_LIP: (0.75, 0.40, 0.40),
}


def _grid_dims(n: int) -> tuple[int, int]:
    rows = max(2, int(np.sqrt(n / 1.2)))
    cols = n // rows
    return rows, cols


def _head_mesh(n: int):
    """Open front-of-head surface with exactly ``n`` vertices, rows top to bottom."""
    a, b, c = HEAD_AXES
    rows, cols = _grid_dims(n)
    extra = n - rows * cols
    lat = np.linspace(1.25, -1.2, rows)
    lon = np.linspace(-1.75, 1.75, cols)
    dlat = lat[0] - lat[1]
    th, ph = np.meshgrid(lat, lon, indexing="ij")
    th, ph = th.ravel(), ph.ravel()
    offset = (cols - extra) // 2
    if extra:
        th = np.concatenate([th, np.full(extra, lat[-1] - dlat)])
        ph = np.concatenate([ph, lon[offset:offset + extra]])
    v = np.stack([a * np.cos(th) * np.sin(ph), b * np.sin(th), c * np.cos(th) * np.cos(ph)], axis=1)

    def idx(r, col):
        return r * cols + col

    tris = []
    for r in range(rows - 1):
        for col in range(cols - 1):
            v00, v01, v10, v11 = idx(r, col), idx(r, col + 1), idx(r + 1, col), idx(r + 1, col + 1)
            tris.append((v00, v10, v01))
            tris.append((v01, v10, v11))
    base = rows * cols
    last = rows - 1
    if extra == 1:
        tris.append((idx(last, offset), base, idx(last, offset + 1)))
    for j in range(extra - 1):
        t0, t1 = idx(last, offset + j), idx(last, offset + j + 1)
        b0, b1 = base + j, base + j + 1
        tris.append((t0, b0, t1))
        tris.append((t1, b0, b1))
    return v, np.array(tris, dtype=np.int32)


def _template_to_model(tpl: np.ndarray) -> np.ndarray:
    return np.stack([tpl[:, 0] * TEMPLATE_SCALE, tpl[:, 1] * TEMPLATE_SCALE + TEMPLATE_Y_OFFSET], axis=1)


def _tag_vertices(v: np.ndarray) -> np.ndarray:
    tpl = _template_to_model(L.face_template())
    xy = v[:, :2]
    front = v[:, 2] > 0
    tags = np.full(len(v), L.SKIN, dtype=np.uint8)
    for idx, cls in ((L.LEFT_BROW_IDX, L.LEFT_BROW), (L.RIGHT_BROW_IDX, L.RIGHT_BROW),
                     (L.LEFT_EYE_IDX, L.LEFT_EYE), (L.RIGHT_EYE_IDX, L.RIGHT_EYE),
                     (L.NOSE_IDX, L.NOSE)):
        tags[front & L.points_in_polygon(xy, tpl[list(idx)])] = cls
    lips = front & L.points_in_polygon(xy, tpl[list(L.OUTER_LIPS_IDX)])
    mouth_y = 0.5 * (tpl[48, 1] + tpl[54, 1])
    tags[lips & (xy[:, 1] >= mouth_y)] = L.UPPER_LIP
    tags[lips & (xy[:, 1] < mouth_y)] = L.LOWER_LIP
    return tags


def _smooth_fields(rng: np.random.Generator, pts: np.ndarray, count: int, channels: int = 3) -> np.ndarray:
    """``count`` random low-frequency fields over the vertices, each (n*channels,)."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    feats = [np.ones_like(x), x, y, z, x * x, y * y, x * y, y * z, x * z, z * z,
             np.cos(np.pi * x), np.cos(np.pi * y), np.sin(np.pi * x), np.sin(np.pi * y),
             np.cos(2 * np.pi * y) * np.cos(np.pi * x), x * y * y]
    feats = np.stack(feats, axis=1)
    cols = []
    for _ in range(count):
        w = rng.standard_normal((feats.shape[1], channels))
        cols.append((feats @ w).ravel())
    return np.stack(cols, axis=1)


def _orthonormal(mat: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(mat)
    # sign fix so the factorization is unique
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def _pick_landmarks(v: np.ndarray) -> np.ndarray:
    tpl = _template_to_model(L.face_template())
    cand = np.flatnonzero(v[:, 2] > 0)
    if len(cand) < L.N_LANDMARKS:
        cand = np.arange(len(v))
    taken: set[int] = set()
    out = []
    for p in tpl:
        d = np.sum((v[cand, :2] - p) ** 2, axis=1)
        for k in np.argsort(d, kind="stable"):
            if int(cand[k]) not in taken:
                taken.add(int(cand[k]))
                out.append(int(cand[k]))
                break
    return np.array(out, dtype=np.int64)


def make_synthetic_model(seed: int = 0, n_vertices: int = 2000, n_alpha: int = 16, n_beta: int = 16) -> MorphableModel:
    """Deterministic ellipsoid-head model with tagged feature regions and orthonormal bases."""
    if n_vertices < L.N_LANDMARKS:
        raise ModelError(f"need at least {L.N_LANDMARKS} vertices, got {n_vertices}")
    if n_alpha < 1 or n_beta < 1:
        raise ModelError("basis sizes must be at least 1")
    if max(n_alpha, n_beta) > 3 * n_vertices:
        raise ModelError("basis size exceeds the vertex dimension")
    rng = np.random.default_rng(seed)
    v, tris = _head_mesh(n_vertices)

    # nose ridge and brow bulge on top of the ellipsoid
    nose_y = TEMPLATE_Y_OFFSET
    bump = 0.22 * np.exp(-(v[:, 0] ** 2) / (2 * 0.09 ** 2) - (v[:, 1] - nose_y) ** 2 / (2 * 0.2 ** 2))
    brow = 0.05 * np.exp(-((v[:, 1] - 0.55) ** 2) / (2 * 0.08 ** 2)) * (np.abs(v[:, 0]) < 0.8)
    front = v[:, 2] > 0
    v[:, 2] += np.where(front, bump + brow, 0.0)

    tags = _tag_vertices(v)
    lmk = _pick_landmarks(v)
    albedo = np.array([_REGION_ALBEDO[int(t)] for t in tags], dtype=np.float64)

    shape_basis = _orthonormal(_smooth_fields(rng, v, n_alpha))
    albedo_basis = _orthonormal(_smooth_fields(rng, v, n_beta))
    return MorphableModel(
        mean_shape=v.ravel(),
        shape_basis=shape_basis,
        mean_albedo=albedo.ravel(),
        albedo_basis=albedo_basis,
        triangles=tris,
        landmark_indices=lmk,
        region_tags=tags,
    )
