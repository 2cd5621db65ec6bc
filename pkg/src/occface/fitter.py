"""Analysis-by-synthesis fitting of the coefficient vector and vertex-error statistics."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numba
import numpy as np

from . import labels as L
from .losses import (DegenerateEmbeddingError, LossWeights, ToyExtractor, cosine_distance,
                     landmark_loss, pixel_loss, reg_loss, total_3d_loss)
from .morphable import CoefficientVector, MorphableModel
from .raster import GeometryPass, geometry_pass, shade_pass, triangle_regions
from .scene import N_SH, Pose, as_illumination

log = logging.getLogger(__name__)

POSE_NAMES = ("pitch", "yaw", "roll", "f", "tx", "ty")


class FitError(RuntimeError):
    pass


class AlignmentError(FitError):
    pass


class GradientError(FitError):
    pass


@dataclass
class FitConfig:
    max_iters: int = 200
    lr: float = 1e-2
    momentum: float = 0.9
    rms_decay: float = 0.999
    h: float = 1e-3
    angle_h_factor: float = 0.1
    tol: float = 1e-5
    patience: int = 15
    max_halvings: int = 20
    seed: int = 0
    attention: bool = True
    gamma_size: int = 3 * N_SH
    workers: int = 1
    # optimizer units per block: one step of size lr moves a coordinate by about lr * scale
    scale_alpha: float = 10.0
    scale_beta: float = 10.0
    scale_gamma: float = 10.0
    scale_angle: float = 10.0
    scale_f: float = 50.0
    scale_t2d: float = 100.0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if not self.h > 0:
            raise FitError(f"finite-difference step h must be positive, got {self.h}")
        if self.max_iters < 0:
            raise FitError("max_iters must be non-negative")
        if self.gamma_size not in (N_SH, 3 * N_SH):
            raise FitError("gamma_size must be 9 or 27")
        if self.workers < 1:
            raise FitError("workers must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise FitError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


# ---------------------------------------------------------------------------
# layout of the flat coefficient vector


@dataclass(frozen=True)
class Layout:
    n_alpha: int
    n_beta: int
    n_gamma: int

    @property
    def size(self) -> int:
        return self.n_alpha + self.n_beta + self.n_gamma + 6

    @property
    def alpha(self) -> slice:
        return slice(0, self.n_alpha)

    @property
    def beta(self) -> slice:
        return slice(self.n_alpha, self.n_alpha + self.n_beta)

    @property
    def gamma(self) -> slice:
        s = self.n_alpha + self.n_beta
        return slice(s, s + self.n_gamma)

    @property
    def pose(self) -> slice:
        return slice(self.size - 6, self.size)

    def name(self, i: int) -> str:
        for block in ("alpha", "beta", "gamma"):
            sl = getattr(self, block)
            if sl.start <= i < sl.stop:
                return f"{block}[{i - sl.start}]"
        return f"pose.{POSE_NAMES[i - self.pose.start]}"

    def geometric(self, i: int) -> bool:
        """Whether coordinate ``i`` moves the rendered geometry (shape or pose)."""
        return i < self.n_alpha or i >= self.pose.start

    def step_sizes(self, cfg: FitConfig) -> np.ndarray:
        h = np.full(self.size, cfg.h)
        p = self.pose.start
        h[p:p + 3] *= cfg.angle_h_factor
        return h

    def scales(self, cfg: FitConfig) -> np.ndarray:
        s = np.empty(self.size)
        s[self.alpha] = cfg.scale_alpha
        s[self.beta] = cfg.scale_beta
        s[self.gamma] = cfg.scale_gamma
        p = self.pose.start
        s[p:p + 3] = cfg.scale_angle
        s[p + 3] = cfg.scale_f
        s[p + 4:p + 6] = cfg.scale_t2d
        return s

    @classmethod
    def of(cls, coeffs: CoefficientVector) -> "Layout":
        return cls(*coeffs.dims)


# ---------------------------------------------------------------------------
# objective


class LossBreakdown(NamedTuple):
    total: float
    landmark: float
    pixel: float
    reg: float
    feature: float

    def parts(self) -> tuple[float, float, float, float]:
        return self.landmark, self.pixel, self.reg, self.feature


@numba.njit(cache=True, nogil=True)
def _shade_and_score(tri_id, bary, tris, colors, target, weights, k):
    """One pass over the canvas: weighted RGB error sum, weight sum over covered pixels and the
    k x k average pool of the render."""
    h, w = tri_id.shape
    pool = np.zeros((h // k, w // k, 3))
    err_sum = 0.0
    w_sum = 0.0
    inv = 1.0 / (k * k)
    for r in range(h):
        for c in range(w):
            t = tri_id[r, c]
            if t < 0:
                continue
            i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
            b0, b1, b2 = bary[r, c, 0], bary[r, c, 1], bary[r, c, 2]
            sq = 0.0
            for j in range(3):
                val = b0 * colors[i0, j] + b1 * colors[i1, j] + b2 * colors[i2, j]
                d = target[r, c, j] - val
                sq += d * d
                pool[r // k, c // k, j] += val * inv
            err_sum += weights[r, c] * np.sqrt(sq)
            w_sum += weights[r, c]
    return err_sum, w_sum, pool


@numba.njit(cache=True, nogil=True)
def _shade_and_score_batch(tri_id, bary, tris, colors, target, weights, k):
    """``_shade_and_score`` for a stack of vertex-color sets sharing one visibility pass."""
    h, w = tri_id.shape
    n_sets = colors.shape[0]
    pools = np.zeros((n_sets, h // k, w // k, 3))
    err = np.zeros(n_sets)
    w_sum = 0.0
    inv = 1.0 / (k * k)
    for r in range(h):
        for c in range(w):
            t = tri_id[r, c]
            if t < 0:
                continue
            i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
            b0, b1, b2 = bary[r, c, 0], bary[r, c, 1], bary[r, c, 2]
            wt = weights[r, c]
            w_sum += wt
            pr, pc = r // k, c // k
            for s in range(n_sets):
                sq = 0.0
                for j in range(3):
                    val = b0 * colors[s, i0, j] + b1 * colors[s, i1, j] + b2 * colors[s, i2, j]
                    d = target[r, c, j] - val
                    sq += d * d
                    pools[s, pr, pc, j] += val * inv
                err[s] += wt * np.sqrt(sq)
    return err, w_sum, pools


class SceneObjective:
    """Total fitting loss of a coefficient vector against one target image."""

    def __init__(self, model: MorphableModel, target: np.ndarray, lmk: np.ndarray, pixel_weights: np.ndarray,
                 weights: LossWeights = LossWeights(), extractor=None, layout: Layout | None = None):
        self.model = model
        self.target = np.asarray(target, dtype=np.float64)
        if self.target.ndim != 3 or self.target.shape[2] != 3:
            raise FitError(f"target image must be (H, W, 3), got {self.target.shape}")
        self.height, self.width = self.target.shape[:2]
        self.lmk = L.validate_landmarks(lmk)
        self.pixel_weights = np.asarray(pixel_weights, dtype=np.float64)
        if self.pixel_weights.shape != self.target.shape[:2]:
            raise FitError("pixel weights and target image differ in size")
        self.weights = weights
        self.extractor = extractor or ToyExtractor()
        self.target_embedding = self.extractor.embed(self.target)
        self.layout = layout or Layout(model.n_alpha, model.n_beta, 3 * N_SH)
        self._tri_regions = triangle_regions(model.region_tags, model.triangles)
        self._tris = np.ascontiguousarray(model.triangles, dtype=np.int32)
        # fused shading + loss when the extractor is the pooled toy network
        self._fused = isinstance(self.extractor, ToyExtractor) and self.extractor.nested(self.height, self.width)

    def coeffs(self, y) -> CoefficientVector:
        lay = self.layout
        return CoefficientVector.from_array(y, (lay.n_alpha, lay.n_beta, lay.n_gamma))

    def geometry(self, y) -> GeometryPass:
        y = np.asarray(y, dtype=np.float64)
        lay = self.layout
        pose = Pose.from_array(y[lay.pose])
        return geometry_pass(self.model, y[lay.alpha], pose, self.width, self.height, self._tri_regions)

    def evaluate(self, y, geom: GeometryPass | None = None) -> LossBreakdown:
        """Loss at ``y``; ``geom`` may be passed when shape and pose equal those it was built from."""
        y = np.asarray(y, dtype=np.float64)
        lay = self.layout
        if not y[lay.pose][3] > 0:
            return LossBreakdown(math.inf, math.inf, math.inf, math.inf, math.inf)
        if geom is None:
            geom = self.geometry(y)
        lmk = landmark_loss(geom.screen[self.model.landmark_indices], self.lmk)
        reg = reg_loss(y[lay.alpha], y[lay.beta], self.weights)
        if self._fused:
            pix, emb = self._fused_terms(geom, y[lay.beta], y[lay.gamma])
        else:
            image = shade_pass(self.model, geom, y[lay.beta], y[lay.gamma])
            cov = geom.coverage
            pix = pixel_loss(self.target, image, self.pixel_weights, cov).value if cov.any() else 0.0
            emb = self.extractor.embed(image)
        try:
            ff = cosine_distance(self.target_embedding, emb)
        except DegenerateEmbeddingError:
            ff = 1.0
        parts = (lmk, pix, reg, ff)
        return LossBreakdown(total_3d_loss(parts, self.weights), *parts)

    def __call__(self, y) -> float:
        return self.evaluate(y).total

    def appearance_batch(self, y, geom: GeometryPass, coords, h) -> np.ndarray:
        """Totals at ``y + h_i e_i`` and ``y - h_i e_i`` for albedo/lighting coordinates ``coords``.

        All perturbed renders share the visibility pass ``geom`` of ``y``, so they
        are shaded and scored together. Returns an array of shape (len(coords), 2).
        """
        lay = self.layout
        m = self.model
        y = np.asarray(y, dtype=np.float64)
        coords = np.asarray(coords, dtype=np.int64)
        h = np.broadcast_to(np.asarray(h, dtype=np.float64), coords.shape)
        beta = y[lay.beta]
        gamma = y[lay.gamma]
        n = m.n_vertices
        raw = m.mean_albedo + m.albedo_basis @ beta
        albedo = np.clip(raw, 0.0, 1.0).reshape(n, 3)
        g = as_illumination(gamma)
        irr = geom.sh @ g.T
        if irr.shape[1] == 1:
            irr = np.repeat(irr, 3, axis=1)
        colors = np.empty((2 * len(coords), n, 3))
        betas = np.empty((2 * len(coords), lay.n_beta))
        for k, (i, step) in enumerate(zip(coords, h)):
            for s, sign in enumerate((1.0, -1.0)):
                row = 2 * k + s
                betas[row] = beta
                if lay.beta.start <= i < lay.beta.stop:
                    j = i - lay.beta.start
                    betas[row, j] += sign * step
                    alb = np.clip(raw + sign * step * m.albedo_basis[:, j], 0.0, 1.0).reshape(n, 3)
                    colors[row] = np.clip(alb * irr, 0.0, 1.0)
                elif lay.gamma.start <= i < lay.gamma.stop:
                    j = i - lay.gamma.start
                    band = j % N_SH
                    irr_k = irr.copy()
                    if g.shape[0] == 3:
                        irr_k[:, j // N_SH] += sign * step * geom.sh[:, band]
                    else:
                        irr_k += sign * step * geom.sh[:, band][:, None]
                    colors[row] = np.clip(albedo * irr_k, 0.0, 1.0)
                else:
                    raise FitError(f"coordinate {lay.name(int(i))} moves the geometry")
        err, denom, pools = _shade_and_score_batch(geom.tri_id, geom.bary, self._tris, colors, self.target,
                                                   self.pixel_weights, self.extractor.scales[0])
        pix = err / denom if denom > 0 else np.zeros_like(err)
        emb = self.extractor.embed_from_pools(pools)
        tn = np.linalg.norm(self.target_embedding)
        en = np.linalg.norm(emb, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = emb @ self.target_embedding / (en * tn)
        ff = np.where((en == 0.0) | (tn == 0.0), 1.0, 1.0 - np.clip(cos, -1.0, 1.0))
        w = self.weights
        alpha = y[lay.alpha]
        reg = w.omega_alpha * np.dot(alpha, alpha) + w.omega_beta * np.einsum("ij,ij->i", betas, betas)
        lmk = landmark_loss(geom.screen[m.landmark_indices], self.lmk)
        totals = w.lambda_lmk * lmk + w.lambda_pix * pix + w.lambda_reg * reg + w.lambda_ff * ff
        return totals.reshape(len(coords), 2)

    def _fused_terms(self, geom: GeometryPass, beta, gamma):
        m = self.model
        albedo = np.clip(m.mean_albedo + m.albedo_basis @ beta, 0.0, 1.0).reshape(-1, 3)
        irr = geom.sh @ as_illumination(gamma).T
        colors = np.clip(albedo * irr, 0.0, 1.0)
        err_sum, denom, pool = _shade_and_score(geom.tri_id, geom.bary, self._tris, colors, self.target,
                                                self.pixel_weights, self.extractor.scales[0])
        pix = err_sum / denom if denom > 0 else 0.0
        return pix, self.extractor.embed_from_pool(pool)


# ---------------------------------------------------------------------------
# gradient


def loss_gradient(objective: Callable, y, cfg: FitConfig = None, h=None, layout: Layout | None = None,
                  base_geometry: GeometryPass | None = None) -> np.ndarray:
    """Central finite differences of ``objective`` at ``y``.

    ``h`` is a scalar or per-coordinate step; by default it comes from ``cfg``
    (pose angles use ``h * angle_h_factor``). For a SceneObjective, coordinates
    that leave shape and pose untouched reuse the visibility pass at ``y``.
    """
    cfg = cfg or FitConfig()
    y = np.asarray(y, dtype=np.float64)
    scene = isinstance(objective, SceneObjective)
    layout = layout or (objective.layout if scene else None)
    if h is None:
        h = layout.step_sizes(cfg) if layout is not None else np.full(y.size, cfg.h)
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), y.shape)
    if np.any(h <= 0):
        raise GradientError("finite-difference steps must be positive")
    if scene and base_geometry is None:
        base_geometry = objective.geometry(y)

    def f(point, i):
        if scene:
            geom = None if layout.geometric(i) else base_geometry
            return objective.evaluate(point, geom).total
        return float(objective(point))

    def coord(i):
        yp, ym = y.copy(), y.copy()
        yp[i] += h[i]
        ym[i] -= h[i]
        fp, fm = f(yp, i), f(ym, i)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            name = layout.name(i) if layout is not None else f"y[{i}]"
            raise GradientError(f"non-finite loss when perturbing {name}")
        return (fp - fm) / (2.0 * h[i])

    grad = np.empty(y.size)
    todo = list(range(y.size))
    if scene and objective._fused:
        # albedo and lighting coordinates share the visibility pass at y: score them in one batch
        cheap = [i for i in todo if not layout.geometric(i)]
        if cheap:
            pm = objective.appearance_batch(y, base_geometry, cheap, h[cheap])
            for (fp, fm), i in zip(pm, cheap):
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise GradientError(f"non-finite loss when perturbing {layout.name(i)}")
                grad[i] = (fp - fm) / (2.0 * h[i])
            todo = [i for i in todo if layout.geometric(i)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            vals = list(pool.map(coord, todo))
    else:
        vals = [coord(i) for i in todo]
    grad[todo] = vals
    return grad


# ---------------------------------------------------------------------------
# initialization


def init_pose_from_landmarks(model: MorphableModel, lmk) -> Pose:
    """Least-squares similarity (scale, roll, translation) from mean-shape landmarks to ``lmk``."""
    dst = L.validate_landmarks(lmk)
    src3 = model.mean_shape.reshape(-1, 3)[model.landmark_indices]
    src = np.stack([src3[:, 0], -src3[:, 1]], axis=1)
    for pts, what in ((dst, "landmark"), (src, "model landmark")):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
            raise AlignmentError(f"degenerate {what} configuration (rank < 2)")
    n = len(src)
    a_mat = np.zeros((2 * n, 4))
    a_mat[:n] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    a_mat[n:] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    rhs = np.concatenate([dst[:, 0], dst[:, 1]])
    (a, b, tx, ty), *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    f = math.hypot(a, b)
    if not f > 0:
        raise AlignmentError("alignment produced a non-positive scale")
    return Pose(0.0, 0.0, math.atan2(-b, a), f, tx, ty)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitReport:
    coeffs: CoefficientVector
    initial_coeffs: CoefficientVector
    initial_loss: LossBreakdown
    final_loss: LossBreakdown
    trace: list[LossBreakdown]
    termination: str
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def to_dict(self, weights: LossWeights | None = None, include_timing: bool = False) -> dict:
        d = {
            "termination": self.termination,
            "iterations": self.iterations,
            "initial_loss": self.initial_loss._asdict(),
            "final_loss": self.final_loss._asdict(),
            "coefficients": self.coeffs.to_dict(),
            "initial_coefficients": self.initial_coeffs.to_dict(),
            "trace": [t._asdict() for t in self.trace],
        }
        if weights is not None:
            d["loss_weights"] = weights.to_dict()
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def trace_csv(self) -> str:
        rows = ["iteration,total,landmark,pixel,reg,feature"]
        rows += [f"{i},{t.total!r},{t.landmark!r},{t.pixel!r},{t.reg!r},{t.feature!r}"
                 for i, t in enumerate([self.initial_loss] + self.trace)]
        return "\n".join(rows) + "\n"


def _cosine_lr(cfg: FitConfig, it: int) -> float:
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * it / max(cfg.max_iters, 1)))


def fit(model: MorphableModel, target, m_alpha, lmk, cfg: FitConfig | None = None,
        sets: L.LabelClassSets | None = None, extractor=None,
        callback: Callable[[int, LossBreakdown], None] | None = None) -> FitReport:
    """Minimize the weighted landmark + pixel + regularization + feature loss.

    Starts from the landmark similarity pose with zero shape/albedo
    coefficients and neutral lighting, then runs momentum descent with
    per-coordinate RMS scaling on finite-difference gradients. A step that
    raises the loss is halved up to ``max_halvings`` times, so the accepted
    loss never increases. When every halving fails the next gradient uses a
    wider difference step, reset to the configured one after a success.
    """
    cfg = cfg or FitConfig()
    t0 = time.perf_counter()
    target = np.asarray(target, dtype=np.float64)
    m_alpha = L.validate_label_map(m_alpha)
    if target.shape[:2] != m_alpha.shape:
        raise FitError(f"target {target.shape[:2]} and parsing map {m_alpha.shape} differ in size")
    if cfg.attention:
        pw = L.occlusion_attention(m_alpha, sets)
    else:
        pw = np.ones(m_alpha.shape)
    layout = Layout(model.n_alpha, model.n_beta, cfg.gamma_size)
    obj = SceneObjective(model, target, lmk, pw, cfg.weights, extractor, layout)

    init = CoefficientVector.neutral(model, init_pose_from_landmarks(model, lmk), cfg.gamma_size)
    y = init.as_array()
    cur = obj.evaluate(y)
    initial = cur
    scales = layout.scales(cfg)
    steps = layout.step_sizes(cfg)
    widen = 1.0
    m = np.zeros_like(y)
    v = np.zeros_like(y)
    trace: list[LossBreakdown] = []
    termination = "max_iters"
    stall = 0
    if cfg.max_iters == 0:
        termination = "no_iterations"

    for it in range(cfg.max_iters):
        geom = obj.geometry(y)
        grad = loss_gradient(obj, y, cfg, h=steps * widen, layout=layout, base_geometry=geom) * scales
        m = cfg.momentum * m + (1.0 - cfg.momentum) * grad
        v = cfg.rms_decay * v + (1.0 - cfg.rms_decay) * grad * grad
        m_hat = m / (1.0 - cfg.momentum ** (it + 1))
        v_hat = v / (1.0 - cfg.rms_decay ** (it + 1))
        step = -_cosine_lr(cfg, it) * m_hat / (np.sqrt(v_hat) + 1e-12) * scales

        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = y + step
            res = obj.evaluate(cand)
            if res.total <= cur.total:
                accepted = (cand, res)
                break
            step *= 0.5
        if accepted is None:
            # a coverage jump inside the difference stencil can fake the gradient: widen it and retry
            m[:] = 0.0
            widen = min(widen * 4.0, 256.0)
            res = cur
        else:
            y, res = accepted
            widen = 1.0
        rel = (cur.total - res.total) / max(abs(cur.total), 1e-300)
        cur = res
        trace.append(cur)
        if callback:
            callback(it, cur)
        stall = stall + 1 if rel < cfg.tol else 0
        if stall >= cfg.patience:
            termination = "converged"
            break

    coeffs = obj.coeffs(y)
    report = FitReport(coeffs, init, initial, cur, trace, termination, time.perf_counter() - t0)
    log.info("fit finished: %s after %d iterations, loss %.6g -> %.6g (%.2fs)",
             termination, len(trace), initial.total, cur.total, report.wall_time)
    return report


# ---------------------------------------------------------------------------
# evaluation


class VertexErrorStats(NamedTuple):
    mean_of_smallest_90pct: float
    p90_value: float


def vertex_error_stats(fitted, truth) -> VertexErrorStats:
    """Per-vertex Euclidean errors summarized two ways, with nearest-rank 90th percentile."""
    a = np.asarray(fitted, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"vertex arrays differ in size: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ValueError("no vertices to compare")
    err = np.sort(np.linalg.norm(a - b, axis=1))
    k = (9 * len(err) + 9) // 10    # ceil(0.9 n) without float rounding
    return VertexErrorStats(float(err[:k].mean()), float(err[k - 1]))
