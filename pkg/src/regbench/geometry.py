"""2D transforms, exact/least-squares solvers and seeded RANSAC.

Points are (x, y) pixel coordinates, origin at the centre of the top-left
pixel. Transforms map optical (source) coordinates to SAR (target)
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .correspondences import Correspondences
from .errors import (
    BelowInlierGate,
    DegenerateConfiguration,
    DegeneratePoint,
    InsufficientCorrespondences,
)

ModelKind = Literal["affine", "homography"]
MODEL_KINDS: tuple[str, ...] = ("affine", "homography")
MIN_SAMPLE = {"affine": 3, "homography": 4}

_DENOM_EPS = 1e-12
_COLLINEAR_RTOL = 1e-8
_MAX_DEGENERATE_REDRAWS = 100


def normalize_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64).reshape(3, 3)
    if abs(h[2, 2]) > 1e-9:
        return h / h[2, 2]
    h = h / np.linalg.norm(h)
    if np.trace(h) < 0:
        h = -h
    return h


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Row-major 2x3 matrix [[a, b, tx], [c, d, ty]]."""

    m: np.ndarray
    kind: str = field(default="affine", init=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(2, 3)
        if not np.isfinite(m).all():
            raise ValueError("affine coefficients must be finite")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> AffineTransform:
        return cls(np.eye(2, 3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> AffineTransform:
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty]])

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.m, [0.0, 0.0, 1.0]])

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.m[:, :2]))

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ self.m[:, :2].T + self.m[:, 2]

    def inverse(self) -> AffineTransform:
        return AffineTransform(np.linalg.inv(self.matrix)[:2])

    def coefficients(self) -> np.ndarray:
        return self.m.reshape(-1).copy()


@dataclass(frozen=True, eq=False)
class Homography:
    """Row-major 3x3 matrix, scaled so h[2, 2] = 1 where possible."""

    h: np.ndarray
    kind: str = field(default="homography", init=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if not np.isfinite(h).all():
            raise ValueError("homography coefficients must be finite")
        h = normalize_homography(h)
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    @property
    def matrix(self) -> np.ndarray:
        return self.h.copy()

    def apply(self, pts) -> np.ndarray:
        """Vectorized mapping; points sent to infinity come back as +inf."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        h = self.h
        den = pts[:, 0] * h[2, 0] + pts[:, 1] * h[2, 1] + h[2, 2]
        num_x = pts[:, 0] * h[0, 0] + pts[:, 1] * h[0, 1] + h[0, 2]
        num_y = pts[:, 0] * h[1, 0] + pts[:, 1] * h[1, 1] + h[1, 2]
        bad = np.abs(den) < _DENOM_EPS
        safe = np.where(bad, 1.0, den)
        out = np.column_stack([num_x / safe, num_y / safe])
        out[bad] = np.inf
        return out

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.h))

    def coefficients(self) -> np.ndarray:
        return self.h.reshape(-1).copy()


GeometricTransform = Union[AffineTransform, Homography]


def as_homography(t: GeometricTransform) -> Homography:
    return t if isinstance(t, Homography) else Homography(t.matrix)


def compose(outer: GeometricTransform, inner: GeometricTransform) -> GeometricTransform:
    """Transform applying ``inner`` first, then ``outer``."""
    m = outer.matrix @ inner.matrix
    if isinstance(outer, AffineTransform) and isinstance(inner, AffineTransform):
        return AffineTransform(m[:2])
    return Homography(m)


def apply_transform(t: GeometricTransform, p) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    if isinstance(t, Homography):
        h = t.h
        den = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        if abs(den) < _DENOM_EPS:
            raise DegeneratePoint(f"homography denominator {den!r} at ({x}, {y})")
        return (
            (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / den,
            (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / den,
        )
    m = t.m
    return (m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2])


def transform_points(t: GeometricTransform, pts) -> np.ndarray:
    return t.apply(pts)


def point_distances(t: GeometricTransform, src, dst) -> np.ndarray:
    """Per-pair ||t(src_i) - dst_i||; +inf where a homography degenerates."""
    mapped = t.apply(src)
    diff = mapped - np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    with np.errstate(invalid="ignore"):
        d = np.hypot(diff[:, 0], diff[:, 1])
    d[~np.isfinite(d)] = np.inf
    return d


def residuals(t: GeometricTransform, corrs: Correspondences) -> np.ndarray:
    return point_distances(t, corrs.src, corrs.dst)


# --- serialization -------------------------------------------------------


def transform_to_line(t: GeometricTransform) -> str:
    return " ".join(repr(float(v)) for v in t.coefficients())


def transform_from_line(line: str) -> GeometricTransform:
    vals = [float(v) for v in line.split()]
    if len(vals) == 6:
        return AffineTransform(np.reshape(vals, (2, 3)))
    if len(vals) == 9:
        return Homography(np.reshape(vals, (3, 3)))
    raise ValueError(f"expected 6 or 9 numbers, got {len(vals)}")


# --- solvers -------------------------------------------------------------


def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    """Isotropic scaling to mean distance sqrt(2) from the centroid."""
    c = pts.mean(axis=0)
    d = np.hypot(*(pts - c).T).mean()
    if not d > 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _check_pairs(src, dst, minimum: int) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"src/dst length mismatch ({len(src)} vs {len(dst)})")
    if len(src) < minimum:
        raise InsufficientCorrespondences(f"need at least {minimum} pairs, got {len(src)}")
    return src, dst


def fit_affine_lsq(src, dst) -> AffineTransform:
    """Least-squares affine from >= 3 pairs; exact for 3 non-collinear pairs."""
    src, dst = _check_pairs(src, dst, 3)
    t = _similarity_normalizer(src)
    xn = src * t[0, 0] + t[:2, 2]
    design = np.column_stack([xn, np.ones(len(xn))])
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("source points are collinear")
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    m = sol.T @ t
    # one refinement step; the residual needs extended precision to help on thin triangles
    ld = np.longdouble
    r = dst.astype(ld) - (src.astype(ld) @ m[:, :2].T.astype(ld) + m[:, 2].astype(ld))
    corr, *_ = np.linalg.lstsq(design, r.astype(np.float64), rcond=None)
    return AffineTransform(m + corr.T @ t)


def fit_homography_dlt(src, dst) -> Homography:
    """Normalized DLT from >= 4 pairs."""
    src, dst = _check_pairs(src, dst, 4)
    t1 = _similarity_normalizer(src)
    t2 = _similarity_normalizer(dst)
    a = src * t1[0, 0] + t1[:2, 2]
    b = dst * t2[0, 0] + t2[:2, 2]
    n = len(a)
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    rows = np.empty((2 * n, 9))
    rows[0::2] = np.column_stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u])
    rows[1::2] = np.column_stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(rows, full_matrices=True)
    if sv[7] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("design matrix is rank deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t2) @ hn @ t1
    # a singular solution means three points were collinear in only one image
    hs = np.linalg.svd(h, compute_uv=False)
    if hs[-1] <= 1e-12 * hs[0]:
        raise DegenerateConfiguration("fitted homography is singular")
    return Homography(h)


_FITTERS = {"affine": fit_affine_lsq, "homography": fit_homography_dlt}


def fit_model(model: str, src, dst) -> GeometricTransform:
    try:
        return _FITTERS[model](src, dst)
    except KeyError:
        raise ValueError(f"unknown geometry {model!r}") from None


def _collinear(a, b, c) -> bool:
    ab, ac, bc = b - a, c - a, c - b
    scale = max(ab @ ab, ac @ ac, bc @ bc)
    area2 = abs(ab[0] * ac[1] - ab[1] * ac[0])
    return scale == 0.0 or area2 <= _COLLINEAR_RTOL * scale


def sample_is_degenerate(pts: np.ndarray) -> bool:
    """True when the sample has any collinear triple."""
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if _collinear(pts[i], pts[j], pts[k]):
                    return True
    return False


# --- RANSAC --------------------------------------------------------------


@dataclass(frozen=True)
class RansacParams:
    reproj_threshold: float = 10.0
    max_iterations: int = 2000
    confidence: float = 0.995
    min_inliers: int = 6
    seed: int = 0

    def __post_init__(self):
        if not self.reproj_threshold > 0:
            raise ValueError("reproj_threshold must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.min_inliers < 1:
            raise ValueError("min_inliers must be >= 1")

    def check_model(self, model: str) -> None:
        if self.min_inliers < MIN_SAMPLE[model]:
            raise ValueError(
                f"min_inliers={self.min_inliers} is below the {model} minimal sample {MIN_SAMPLE[model]}"
            )


@dataclass(eq=False)
class FitResult:
    transform: GeometricTransform
    inlier_mask: np.ndarray
    inlier_count: int
    mean_inlier_residual: float
    iterations: int = 0
    # mean inlier residual of the winning minimal-sample hypothesis
    hypothesis_residual: float = 0.0
    refit_used: bool = True

    def same_as(self, other: FitResult) -> bool:
        return (
            np.array_equal(self.transform.coefficients(), other.transform.coefficients())
            and np.array_equal(self.inlier_mask, other.inlier_mask)
            and self.inlier_count == other.inlier_count
            and self.mean_inlier_residual == other.mean_inlier_residual
            and self.iterations == other.iterations
        )


def adaptive_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    """Trials needed so an all-inlier sample is drawn with the given confidence."""
    if inlier_ratio >= 1.0:
        return 0.0
    good = inlier_ratio**sample_size
    if good <= 0.0:
        return math.inf
    denom = math.log1p(-good)
    if denom == 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - confidence) / denom)


def _draw_sample(rng: np.random.Generator, n: int, s: int, src, dst) -> np.ndarray | None:
    for _ in range(_MAX_DEGENERATE_REDRAWS + 1):
        idx = rng.choice(n, size=s, replace=False)
        if not (sample_is_degenerate(src[idx]) or sample_is_degenerate(dst[idx])):
            return idx
    return None


def _score(r: np.ndarray, thr: float) -> tuple[np.ndarray, int, float]:
    mask = r <= thr
    count = int(mask.sum())
    mean = float(r[mask].mean()) if count else math.inf
    return mask, count, mean


def ransac_fit(corrs: Correspondences, model: str, params: RansacParams) -> FitResult:
    """Seeded RANSAC with adaptive termination and one least-squares refit.

    Hypotheses are ranked by consensus size, then by mean inlier residual;
    remaining ties keep the earlier hypothesis. The refit replaces the best
    hypothesis only if it does not raise the mean inlier residual and still
    clears the inlier gate.
    """
    if model not in MIN_SAMPLE:
        raise ValueError(f"unknown geometry {model!r}")
    params.check_model(model)
    s = MIN_SAMPLE[model]
    src, dst = corrs.src, corrs.dst
    n = len(src)
    if n < s:
        raise InsufficientCorrespondences(f"{n} correspondences, {model} needs {s}")
    thr = params.reproj_threshold
    solve = _FITTERS[model]
    rng = np.random.default_rng(params.seed)

    best = None  # (count, mean, transform, mask)
    needed = math.inf
    it = 0
    while it < params.max_iterations and it < needed:
        it += 1
        idx = _draw_sample(rng, n, s, src, dst)
        if idx is None:
            continue
        try:
            hyp = solve(src[idx], dst[idx])
        except DegenerateConfiguration:
            continue
        mask, count, mean = _score(point_distances(hyp, src, dst), thr)
        if best is None or count > best[0] or (count == best[0] and mean < best[1]):
            best = (count, mean, hyp, mask)
            needed = adaptive_iterations(count / n, s, params.confidence)

    if best is None or best[0] < params.min_inliers:
        got = 0 if best is None else best[0]
        raise BelowInlierGate(f"best consensus {got} < min_inliers {params.min_inliers}", got)

    count, mean, transform, mask = best
    result = FitResult(transform, mask, count, mean, it, mean, refit_used=False)
    try:
        refit = solve(src[mask], dst[mask])
    except DegenerateConfiguration:
        return result
    mask2, count2, mean2 = _score(point_distances(refit, src, dst), thr)
    if count2 >= params.min_inliers and mean2 <= mean:
        result = FitResult(refit, mask2, count2, mean2, it, mean, refit_used=True)
    return result
