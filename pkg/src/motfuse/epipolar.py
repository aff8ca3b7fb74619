"""Fundamental-matrix fitting on point trajectories.

Per object and frame pair, a 3x3 rank-2 fundamental matrix F is fit to
tracked correspondences with the eight-point algorithm inside RANSAC,
and correspondences are scored against any F with the Sampson distance.
Degenerate fits are reported as data (a :class:`Degenerate` result),
never as exceptions: downstream simply does not use them.

All operations are pure; the RANSAC generator is rebuilt per call from
the config seed, so fits for different objects and frame pairs can run
concurrently without affecting each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientPoints(ValueError):
    """Fewer correspondences than the minimal sample needs."""


class DegenerateInput(ValueError):
    """Point configuration does not determine a unique model."""


class UndefinedResidual(ArithmeticError):
    """Sampson denominator is zero; caller treats the datum as missing."""


@dataclass(frozen=True)
class Correspondence:
    """A tracked point seen in two frames, homogeneous normalized coords."""

    p: np.ndarray        # (3,) frame m, third component 1
    p_prime: np.ndarray  # (3,) frame m + gap, third component 1

    def __post_init__(self):
        if self.p[2] != 1.0 or self.p_prime[2] != 1.0:
            raise ValueError("correspondence points must have third component 1")


@dataclass(frozen=True)
class FundamentalMatrix:
    """Canonicalized epipolar model: rank 2, unit Frobenius norm.

    ``inlier_ratio`` and ``n_support`` describe the consensus set the
    matrix was fit on (1.0 and the input size for direct solves).
    """

    f: np.ndarray  # (3, 3)
    inlier_ratio: float = 1.0
    n_support: int = 0


@dataclass(frozen=True)
class Degenerate:
    """Marker for an unusable fundamental-matrix fit."""

    reason: str


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 500
    sampson_inlier_threshold: float = 1e-4  # squared normalized units
    min_inlier_ratio: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.sampson_inlier_threshold <= 0:
            raise ValueError("sampson_inlier_threshold must be > 0")


def _as_point_array(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) homogeneous points, got {pts.shape}")
    return pts


def condition_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Translate/scale points so the centroid is 0 and mean radius sqrt(2).

    Returns the conditioned points and the 3x3 similarity T with
    ``conditioned = (T @ points.T).T``.

    Raises:
        DegenerateInput: if all points coincide (scale undefined).
    """
    pts = _as_point_array(points)
    if pts.shape[0] < 2:
        raise DegenerateInput("need at least 2 points to condition")
    xy = pts[:, :2]
    centroid = xy.mean(axis=0)
    dists = np.linalg.norm(xy - centroid, axis=1)
    mean_dist = dists.mean()
    if mean_dist == 0.0:
        raise DegenerateInput("all points identical; conditioning undefined")
    s = np.sqrt(2.0) / mean_dist
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return pts @ t.T, t


def canonicalize_f(f: np.ndarray) -> np.ndarray:
    """Rank-2 projection, unit Frobenius norm, largest-|entry| positive."""
    u, s, vt = np.linalg.svd(f)
    s = s.copy()
    s[2] = 0.0
    f2 = (u * s) @ vt
    norm = np.linalg.norm(f2)
    if norm == 0.0:
        raise DegenerateInput("zero fundamental matrix")
    f2 = f2 / norm
    flat = f2.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        f2 = -f2
    return f2


def _correspondence_arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    p1 = np.array([c.p for c in corrs], dtype=float)
    p2 = np.array([c.p_prime for c in corrs], dtype=float)
    return p1, p2


def _eight_point_arrays(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    n = p1.shape[0]
    if n < 8:
        raise InsufficientPoints(f"eight-point solve needs >= 8 correspondences, got {n}")
    c1, t1 = condition_points(p1)
    c2, t2 = condition_points(p2)
    x1, y1 = c1[:, 0], c1[:, 1]
    x2, y2 = c2[:, 0], c2[:, 1]
    a = np.column_stack([x2 * x1, x2 * y1, x2,
                         y2 * x1, y2 * y1, y2,
                         x1, y1, np.ones(n)])
    _, s, vt = np.linalg.svd(a)
    # rank < 8 means the null space has dimension > 1 and F is not unique
    # (e.g. all points on one plane, or no motion at all).
    if s[7] <= 1e-10 * s[0]:
        raise DegenerateInput("design matrix rank < 8 (degenerate point configuration)")
    f_cond = vt[-1].reshape(3, 3)
    f = t2.T @ f_cond @ t1
    return canonicalize_f(f)


def eight_point(corrs) -> FundamentalMatrix:
    """Linear eight-point solve over all given correspondences.

    Points are Hartley-conditioned internally; the returned matrix is
    deconditioned back to the input coordinate frame and canonicalized.

    Raises:
        InsufficientPoints: fewer than 8 correspondences.
        DegenerateInput: design matrix rank < 8.
    """
    p1, p2 = _correspondence_arrays(corrs)
    f = _eight_point_arrays(p1, p2)
    return FundamentalMatrix(f=f, inlier_ratio=1.0, n_support=len(corrs))


def _sampson_many(f: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Vectorized squared Sampson distances; 0/0 cases come out as nan."""
    fp = p1 @ f.T           # (n, 3) rows F p
    ftp = p2 @ f            # (n, 3) rows F^T p'
    num = np.einsum("ij,ij->i", p2, fp) ** 2
    den = fp[:, 0] ** 2 + fp[:, 1] ** 2 + ftp[:, 0] ** 2 + ftp[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0.0, num / den, np.nan)


def sampson_distance(f, c: Correspondence) -> float:
    """First-order squared distance of a correspondence to the epipolar constraint.

    ``(p'^T F p)^2 / ((Fp)_1^2 + (Fp)_2^2 + (F^T p')_1^2 + (F^T p')_2^2)``;
    invariant to rescaling F.

    Raises:
        UndefinedResidual: denominator is exactly zero.
    """
    mat = f.f if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
    fp = mat @ c.p
    ftp = mat.T @ c.p_prime
    den = fp[0] ** 2 + fp[1] ** 2 + ftp[0] ** 2 + ftp[1] ** 2
    if den == 0.0:
        raise UndefinedResidual("both points at both epipoles")
    num = float(c.p_prime @ fp) ** 2
    return float(num / den)


def mean_sampson(f, corrs) -> float:
    """Mean Sampson distance over correspondences, skipping undefined ones.

    Raises:
        UndefinedResidual: every correspondence has a zero denominator.
    """
    mat = f.f if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
    p1, p2 = _correspondence_arrays(corrs)
    d = _sampson_many(mat, p1, p2)
    good = ~np.isnan(d)
    if not good.any():
        raise UndefinedResidual("no correspondence has a defined Sampson distance")
    return float(d[good].mean())


def ransac_fit_fundamental(corrs, cfg: RansacConfig) -> FundamentalMatrix | Degenerate:
    """Eight-point RANSAC with a fixed iteration budget.

    Samples 8-point subsets from a generator seeded with ``cfg.rng_seed``,
    scores hypotheses by Sampson-inlier count, and refits on the best
    consensus set. Every failure mode (too few points, low inlier ratio,
    rank-deficient refit) maps to :class:`Degenerate`, never an exception.
    """
    n = len(corrs)
    if n < 8:
        return Degenerate(f"only {n} correspondences (< 8)")
    p1, p2 = _correspondence_arrays(corrs)
    rng = np.random.default_rng(cfg.rng_seed)

    best_count = 0
    best_mask = None
    for _ in range(cfg.max_iters):
        idx = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point_arrays(p1[idx], p2[idx])
        except DegenerateInput:
            continue
        d = _sampson_many(f, p1, p2)
        mask = np.where(np.isnan(d), False, d < cfg.sampson_inlier_threshold)
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None:
        return Degenerate("no non-degenerate hypothesis found")
    ratio = best_count / n
    if ratio < cfg.min_inlier_ratio:
        return Degenerate(f"inlier ratio {ratio:.3f} below {cfg.min_inlier_ratio}")
    try:
        f = _eight_point_arrays(p1[best_mask], p2[best_mask])
    except (InsufficientPoints, DegenerateInput) as exc:
        return Degenerate(f"refit failed: {exc}")
    return FundamentalMatrix(f=f, inlier_ratio=ratio, n_support=best_count)
