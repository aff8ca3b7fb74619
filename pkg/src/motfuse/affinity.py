"""Object-level motion affinities from cross-fitting residuals.

For each frame pair and view, every object's motion model is evaluated
on every object's data, giving a k x k residual matrix. Residuals are
converted to rank-based inlier scores (ordered residual kernel): per
model, objects are ranked by ascending residual and scored
max(t - rank, 0). Affinity between two objects is the dot product of
their score columns, i.e. a weighted co-occurrence count over models —
only ranks matter, so no scene-specific residual threshold is needed.

Frame pairs are aggregated by summing S^T S in ascending frame order,
which keeps reruns bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epipolar import (
    Degenerate,
    FundamentalMatrix,
    UndefinedResidual,
    mean_sampson,
)
from .flowdepth import FlowDepthModel, InsufficientSamples, flow_model_residual

VIEW_TRAJECTORY = "trajectory"
VIEW_FLOW = "flow"


class EmptyInput(ValueError):
    """No score matrices to accumulate."""


@dataclass(frozen=True)
class ResidualMatrix:
    """Entry (i, j): residual of object i's model on object j's data.

    ``valid`` is False where the model was degenerate or the data
    missing; such entries carry no information, not a zero residual.
    """

    values: np.ndarray  # (k, k) float64, >= 0 where valid
    valid: np.ndarray   # (k, k) bool


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray  # (k, k) int64, rows are models, columns are objects


@dataclass(frozen=True)
class AffinityMatrix:
    a: np.ndarray  # (k, k) float64, symmetric, nonnegative
    view: str


def residual_matrix_traj(models, corrs_per_object, min_track_points: int = 8) -> ResidualMatrix:
    """Cross-fit mean Sampson distances for one frame pair.

    ``models[i]`` is a :class:`FundamentalMatrix` or :class:`Degenerate`
    (or None); ``corrs_per_object[j]`` are object j's correspondences.
    Degenerate models invalidate their row; objects with fewer than
    ``min_track_points`` correspondences invalidate their column.
    """
    k = len(models)
    if k != len(corrs_per_object):
        raise ValueError("models and correspondence lists must align")
    if k < 2:
        raise ValueError("need at least 2 objects")
    values = np.zeros((k, k))
    valid = np.zeros((k, k), dtype=bool)
    col_ok = [len(c) >= min_track_points for c in corrs_per_object]
    for i, model in enumerate(models):
        if model is None or isinstance(model, Degenerate):
            continue
        for j in range(k):
            if not col_ok[j]:
                continue
            try:
                values[i, j] = mean_sampson(model, corrs_per_object[j])
            except UndefinedResidual:
                continue
            valid[i, j] = True
    return ResidualMatrix(values=values, valid=valid)


def residual_matrix_flow(models, samples_per_object, min_samples: int = 4) -> ResidualMatrix:
    """Cross-fit mean-squared flow residuals for one frame pair.

    Missing models invalidate rows; objects with fewer than
    ``min_samples`` flow samples invalidate their column.
    """
    k = len(models)
    if k != len(samples_per_object):
        raise ValueError("models and sample lists must align")
    if k < 2:
        raise ValueError("need at least 2 objects")
    values = np.zeros((k, k))
    valid = np.zeros((k, k), dtype=bool)
    col_ok = [len(s) >= min_samples for s in samples_per_object]
    for i, model in enumerate(models):
        if model is None or not isinstance(model, FlowDepthModel):
            continue
        for j in range(k):
            if not col_ok[j]:
                continue
            try:
                values[i, j] = flow_model_residual(model, samples_per_object[j])
            except InsufficientSamples:
                continue
            valid[i, j] = True
    return ResidualMatrix(values=values, valid=valid)


def ork_scores(r: ResidualMatrix, t: int) -> ScoreMatrix:
    """Rank residuals per model row and score max(t - rank, 0).

    Ranks are ascending over the row's valid entries only, ties broken
    by lower object index. Invalid entries and fully invalid rows score
    zero. Only the ordering of residuals matters, never their scale.
    """
    k = r.values.shape[0]
    if not (1 <= t <= k):
        raise ValueError(f"t must be in [1, {k}], got {t}")
    scores = np.zeros((k, k), dtype=np.int64)
    for i in range(k):
        cols = np.flatnonzero(r.valid[i])
        if cols.size == 0:
            continue
        order = cols[np.lexsort((cols, r.values[i, cols]))]
        ranks = np.arange(order.size)
        scores[i, order] = np.maximum(t - ranks, 0)
    return ScoreMatrix(scores=scores)


def accumulate_affinity(score_matrices, view: str) -> AffinityMatrix:
    """Sum S^T S over frame pairs (ascending frame order).

    With rows of S indexing models and columns indexing objects,
    (S^T S)_ij is the weighted count of models under which objects i
    and j are jointly high-ranked inliers.

    Raises:
        EmptyInput: no matrices given.
    """
    mats = list(score_matrices)
    if not mats:
        raise EmptyInput("no score matrices to accumulate")
    k = mats[0].scores.shape[0]
    a = np.zeros((k, k))
    for m in mats:
        if m.scores.shape != (k, k):
            raise ValueError("score matrices must share shape")
        s = m.scores.astype(np.float64)
        a += s.T @ s
    return AffinityMatrix(a=a, view=view)


def normalize_affinity(a: AffinityMatrix) -> AffinityMatrix:
    """Row-normalize, then restore symmetry with (M + M^T)/2.

    Zero rows are left zero. Row normalization alone breaks symmetry,
    and the downstream eigensolver needs a symmetric operator.
    """
    m = a.a.astype(np.float64).copy()
    sums = m.sum(axis=1)
    nz = sums > 0
    m[nz] = m[nz] / sums[nz, None]
    m = (m + m.T) / 2.0
    return AffinityMatrix(a=m, view=a.view)


def debug_payload(view: str, frame_pairs, residuals, scores, affinity: AffinityMatrix) -> dict:
    """JSON-ready dump of one view's intermediate matrices."""
    return {
        "view": view,
        "frame_pairs": [list(p) for p in frame_pairs],
        "residuals": [
            {"values": r.values.tolist(), "valid": r.valid.tolist()} for r in residuals
        ],
        "scores": [s.scores.tolist() for s in scores],
        "affinity": affinity.a.tolist(),
    }
