"""Loss terms for image synthesis (adversarial, feature matching, perceptual) and 3D fitting.

Extractors and discriminators are duck-typed; the seeded toy implementations
here exercise the formulas without any trained network.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from . import labels as L


class LossError(ValueError):
    pass


class DegenerateEmbeddingError(LossError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_fea: float = 10.0
    lambda_per: float = 10.0
    lambda_lmk: float = 1.6e-3
    lambda_pix: float = 1.4
    lambda_reg: float = 3.7e-4
    lambda_ff: float = 0.2
    omega_alpha: float = 1.0
    omega_beta: float = 1.75e-3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise LossError(f"loss weight {k} must be finite and non-negative, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise LossError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


class FeatureExtractor(Protocol):
    layer_count: int

    def layers(self, image: np.ndarray) -> list[np.ndarray]: ...

    def embed(self, image: np.ndarray) -> np.ndarray: ...


class Discriminator(Protocol):
    def __call__(self, image: np.ndarray, label_map: np.ndarray) -> tuple[float, list[np.ndarray]]: ...


# ---------------------------------------------------------------------------
# 3D fitting terms


def landmark_loss(pred, gt) -> float:
    """Mean squared Euclidean distance over the 68 landmark pairs."""
    p = L.validate_landmarks(pred)
    g = L.validate_landmarks(gt)
    d = p - g
    return float(np.sum(d * d) / L.N_LANDMARKS)


class PixelLoss(NamedTuple):
    value: float
    empty_mask: bool


def pixel_loss(target, rendered, weights, mask=None) -> PixelLoss:
    """Attention-weighted mean of per-pixel RGB L2 error over the rendered face region.

    ``rendered`` is an (H, W, 3) image or a RenderBuffer (whose coverage is the
    default mask). An empty mask yields 0 with ``empty_mask`` set.
    """
    if hasattr(rendered, "coverage"):
        if mask is None:
            mask = rendered.coverage
        rendered = rendered.color
    t = np.asarray(target, dtype=np.float64)
    r = np.asarray(rendered, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if t.shape != r.shape or t.shape[:2] != w.shape:
        raise LossError(f"misaligned inputs: target {t.shape}, rendered {r.shape}, weights {w.shape}")
    # dense weighting beats boolean gathers at these image sizes
    wm = w if mask is None else w * np.asarray(mask, dtype=bool)
    denom = wm.sum()
    if denom == 0.0:
        warnings.warn("pixel loss over an empty face region", RuntimeWarning, stacklevel=2)
        return PixelLoss(0.0, True)
    diff = (t - r).reshape(-1, t.shape[-1])
    err = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return PixelLoss(float(np.dot(wm.ravel(), err) / denom), False)


def reg_loss(alpha, beta, w: LossWeights = LossWeights()) -> float:
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    return float(w.omega_alpha * np.dot(a, a) + w.omega_beta * np.dot(b, b))


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateEmbeddingError("cosine distance of a zero-norm embedding")
    cos = float(np.dot(u, v) / (nu * nv))
    return 1.0 - min(1.0, max(-1.0, cos))


def feature_cosine_loss(a, b, g: FeatureExtractor) -> float:
    return cosine_distance(g.embed(a), g.embed(b))


class Loss3DParts(NamedTuple):
    landmark: float
    pixel: float
    reg: float
    feature: float


def total_3d_loss(parts: Sequence[float], w: LossWeights = LossWeights()) -> float:
    lmk, pix, reg, ff = (float(p) for p in parts)
    return w.lambda_lmk * lmk + w.lambda_pix * pix + w.lambda_reg * reg + w.lambda_ff * ff


# ---------------------------------------------------------------------------
# image synthesis terms


def _score(d, pair) -> float:
    s = float(d(*pair)[0])
    if not 0.0 < s < 1.0:
        raise LossError(f"discriminator score {s} outside (0, 1)")
    return s


def gan_loss(discriminators, real_pairs, fake_pairs, mode: str = "standard") -> float:
    """Conditional adversarial loss summed over discriminator scales.

    ``standard``: ``E[log D(real)] + E[log(1 - D(fake))]``.
    ``literal``: ``E[log D(real)] + E[1 - log D(fake)]``.
    Expectations are means over the given sample pairs.
    """
    if mode not in ("standard", "literal"):
        raise LossError(f"unknown adversarial loss mode {mode!r}")
    if callable(discriminators):
        discriminators = [discriminators]
    if not real_pairs or not fake_pairs:
        raise LossError("need at least one real and one fake sample")
    total = 0.0
    for d in discriminators:
        real = np.mean([math.log(_score(d, p)) for p in real_pairs])
        if mode == "standard":
            fake = np.mean([math.log(1.0 - _score(d, p)) for p in fake_pairs])
        else:
            fake = np.mean([1.0 - math.log(_score(d, p)) for p in fake_pairs])
        total += real + fake
    return float(total)


def feature_matching_loss(discriminators, real_pairs, fake_pairs) -> float:
    """Sum over scales and layers of the L1 distance between discriminator features, averaged over pairs."""
    if callable(discriminators):
        discriminators = [discriminators]
    real_pairs, fake_pairs = list(real_pairs), list(fake_pairs)
    if len(real_pairs) != len(fake_pairs) or not real_pairs:
        raise LossError("feature matching needs equally many real and fake pairs")
    total = 0.0
    for d in discriminators:
        for rp, fp in zip(real_pairs, fake_pairs):
            fr, ff = d(*rp)[1], d(*fp)[1]
            if len(fr) != len(ff):
                raise LossError("discriminator returned different layer counts")
            total += sum(float(np.abs(np.asarray(a) - np.asarray(b)).sum()) for a, b in zip(fr, ff))
    return total / len(real_pairs)


def perceptual_loss(a, b, g: FeatureExtractor) -> float:
    """Sum over layers of the element-count-normalized L1 feature distance."""
    total = 0.0
    for fa, fb in zip(g.layers(a), g.layers(b)):
        fa, fb = np.asarray(fa), np.asarray(fb)
        if fa.shape != fb.shape:
            raise LossError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
        total += float(np.abs(fa - fb).sum()) / fa.size
    return total


class FisnParts(NamedTuple):
    gan: float
    feature_matching: float
    perceptual: float


def fisn_total_loss(parts: Sequence[float], w: LossWeights = LossWeights()) -> float:
    gan, fea, per = (float(p) for p in parts)
    return gan + w.lambda_fea * fea + w.lambda_per * per


# ---------------------------------------------------------------------------
# toy networks


def _halve(x: np.ndarray) -> np.ndarray:
    x = x[0::2] + x[1::2]
    return (x[:, 0::2] + x[:, 1::2]) * 0.25


def _avg_pool(img: np.ndarray, k: int) -> np.ndarray:
    h, w = img.shape[:2]
    hh, ww = h // k, w // k
    if hh == 0 or ww == 0:
        return img.reshape(1, 1, -1).mean(axis=(0, 1), keepdims=True)
    crop = img[:hh * k, :ww * k]
    if k & (k - 1) == 0:
        # repeated 2x2 averaging is much faster than a strided 5-d reduction
        while k > 1:
            crop = _halve(crop)
            k //= 2
        return crop
    return crop.reshape(hh, k, ww, k, -1).mean(axis=(1, 3))


class ToyExtractor:
    """Multi-scale average pooling followed by a fixed seeded random projection.

    ``layers`` returns the pooled maps (one per scale, contrast-centered);
    ``embed`` projects their concatenation to ``embed_dim`` values.
    """

    def __init__(self, seed: int = 0, scales=(4, 8, 16), embed_dim: int = 64):
        self.seed = seed
        self.scales = tuple(scales)
        self.embed_dim = embed_dim
        self.layer_count = len(self.scales)
        self._proj: dict[int, np.ndarray] = {}

    def nested(self, height: int, width: int) -> bool:
        """Whether every scale can be pooled exactly from the finest one on this canvas."""
        chain = all(b % a == 0 for a, b in zip(self.scales, self.scales[1:]))
        k = self.scales[-1]
        return chain and height % k == 0 and width % k == 0

    def layers(self, image) -> list[np.ndarray]:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        if self.nested(*img.shape[:2]):
            return self.layers_from_pool(_avg_pool(img, self.scales[0]))
        out = []
        for k in self.scales:
            p = _avg_pool(img, k)
            out.append(p - p.mean())
        return out

    def layers_from_pool(self, pool: np.ndarray) -> list[np.ndarray]:
        """Layers from the image already average-pooled at the finest scale (nested scales only)."""
        out = []
        prev, prev_k = pool, self.scales[0]
        for k in self.scales:
            if k != prev_k:
                prev = _avg_pool(prev, k // prev_k)
                prev_k = k
            out.append(prev - prev.mean())
        return out

    def _projection(self, n: int) -> np.ndarray:
        if n not in self._proj:
            rng = np.random.default_rng(self.seed)
            self._proj[n] = rng.standard_normal((n, self.embed_dim)) / math.sqrt(n)
        return self._proj[n]

    def embed(self, image) -> np.ndarray:
        return self._project(self.layers(image))

    def embed_from_pool(self, pool: np.ndarray) -> np.ndarray:
        return self._project(self.layers_from_pool(pool))

    def embed_from_pools(self, pools: np.ndarray) -> np.ndarray:
        """Embeddings of a stack of finest-scale pools, shape (K, h, w, c) -> (K, embed_dim)."""
        pools = np.asarray(pools, dtype=np.float64)
        n = len(pools)
        feats = []
        prev, prev_k = pools, self.scales[0]
        for k in self.scales:
            if k != prev_k:
                f = k // prev_k
                _, hh, ww, c = prev.shape
                prev = prev.reshape(n, hh // f, f, ww // f, f, c).mean(axis=(2, 4))
                prev_k = k
            feats.append((prev - prev.mean(axis=(1, 2, 3), keepdims=True)).reshape(n, -1))
        flat = np.concatenate(feats, axis=1)
        return flat @ self._projection(flat.shape[1])

    def _project(self, layers) -> np.ndarray:
        feats = np.concatenate([f.ravel() for f in layers])
        return feats @ self._projection(feats.size)


class ToyDiscriminator:
    """Seeded patch discriminator on (image, label map): pooled features and a logistic score."""

    def __init__(self, seed: int = 0, scale: int = 1, pools=(4, 8)):
        self.seed = seed
        self.scale = scale
        self.pools = tuple(pools)
        self._w: dict[int, np.ndarray] = {}

    def _inputs(self, image, label_map) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        lab = np.asarray(label_map, dtype=np.float64)[..., None] / (L.N_CLASSES - 1)
        x = np.concatenate([img, lab], axis=2)
        return _avg_pool(x, self.scale) if self.scale > 1 else x

    def __call__(self, image, label_map) -> tuple[float, list[np.ndarray]]:
        x = self._inputs(image, label_map)
        feats = [np.tanh(_avg_pool(x, k) - 0.5) for k in self.pools]
        flat = np.concatenate([f.ravel() for f in feats])
        if flat.size not in self._w:
            self._w[flat.size] = np.random.default_rng(self.seed).standard_normal(flat.size) / math.sqrt(flat.size)
        logit = float(flat @ self._w[flat.size])
        # keep the score strictly inside (0, 1)
        score = 1.0 / (1.0 + math.exp(-max(-30.0, min(30.0, logit))))
        return score, feats


def default_discriminators(seed: int = 0) -> list[ToyDiscriminator]:
    return [ToyDiscriminator(seed, scale=1), ToyDiscriminator(seed + 1, scale=2)]
