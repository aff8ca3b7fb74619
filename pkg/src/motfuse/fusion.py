"""Co-regularized multi-view spectral fusion and pipeline orchestration.

The two per-view affinity matrices are turned into symmetric normalized
similarity operators; alternating eigendecompositions with a consensus
term lambda * ||U_a^T U_b||_F^2 pull the two spectral embeddings toward
agreement. Objects are then k-means-clustered on the concatenated
embeddings, so neither cue is privileged. ``segment_scene`` runs the
whole chain from a scene bundle to cluster labels and dense maps.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import affinity as aff
from .core import EngineConfig, SceneBundle, normalize_xy
from .epipolar import Correspondence, ransac_fit_fundamental
from .flowdepth import (
    INV_DEPTH_CAP,
    FlowSample,
    InsufficientSamples,
    fit_flow_depth_model,
)

LAPLACIAN_EPS = 1e-8


class EigenFailure(RuntimeError):
    """Symmetric eigendecomposition did not converge."""


class NotEnoughEvidence(RuntimeError):
    """Some object never produced usable residuals in any requested view."""


@dataclass(frozen=True)
class ViewLaplacian:
    l: np.ndarray  # (k, k) symmetric, spectrum within [-1, 1]
    view: str


@dataclass(frozen=True)
class Embedding:
    u: np.ndarray  # (k, n_motions), orthonormal columns
    view: str


@dataclass(frozen=True)
class CoregEmbeddings:
    """Pair of consensus embeddings plus the objective after each half-step."""

    u_traj: Embedding
    u_flow: Embedding
    objective_trace: tuple[float, ...]

    def __iter__(self):
        return iter((self.u_traj, self.u_flow))


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-object motion labels, ordered like ``bundle.objects``."""

    labels: np.ndarray  # (k,) int, values in [0, n_motions)
    moving: np.ndarray  # (k,) bool; False iff in the background's cluster


@dataclass(frozen=True)
class SegmentationResult:
    """Pipeline output; unpacks as (assignment, moving_maps)."""

    assignment: ClusterAssignment
    moving_maps: list  # per-frame (h, w) uint16 maps of moving clusters
    affinities: dict   # view -> normalized AffinityMatrix

    def __iter__(self):
        return iter((self.assignment, self.moving_maps))


def normalized_laplacian(a: aff.AffinityMatrix) -> ViewLaplacian:
    """D^(-1/2) (A + eps*I) D^(-1/2); eps guards isolated objects."""
    m = a.a + LAPLACIAN_EPS * np.eye(a.a.shape[0])
    d = m.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    l = m * inv_sqrt[:, None] * inv_sqrt[None, :]
    l = (l + l.T) / 2.0
    return ViewLaplacian(l=l, view=a.view)


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    out = u.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, j] = -col
    return out


def top_eigenvectors(m: np.ndarray, k: int) -> np.ndarray:
    """Top-k eigenvectors of a symmetric matrix, descending eigenvalue,
    sign-canonicalized so the largest-|entry| of each column is positive."""
    try:
        _, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return _canonical_sign(vecs[:, ::-1][:, :k])


def coregularized_embeddings(l_traj: ViewLaplacian, l_flow: ViewLaplacian,
                             k_motions: int, lam: float,
                             iters: int) -> CoregEmbeddings:
    """Alternating maximization of the pairwise co-regularized objective.

    Starting from the flow view's own top eigenvectors, each half-step
    re-solves one view's eigenproblem with the other view's projector
    added (weight ``lam``). The objective
    tr(Ut' Lt Ut) + tr(Uf' Lf Uf) + lam * ||Ut' Uf||_F^2
    is recorded after every half-step and is non-decreasing, since each
    half-step is an exact maximizer for its block.

    With lam == 0 the additions are skipped entirely, so each output is
    bit-identical to that view's independent spectral embedding.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    lt, lf = l_traj.l, l_flow.l
    u_flow = top_eigenvectors(lf, k_motions)
    u_traj = top_eigenvectors(lt, k_motions)  # placeholder until first half-step
    trace = []

    def objective():
        j = np.trace(u_traj.T @ lt @ u_traj) + np.trace(u_flow.T @ lf @ u_flow)
        if lam:
            j += lam * np.linalg.norm(u_traj.T @ u_flow) ** 2
        return float(j)

    for _ in range(iters):
        m = lt + lam * (u_flow @ u_flow.T) if lam else lt
        u_traj = top_eigenvectors(m, k_motions)
        trace.append(objective())
        m = lf + lam * (u_traj @ u_traj.T) if lam else lf
        u_flow = top_eigenvectors(m, k_motions)
        trace.append(objective())

    return CoregEmbeddings(
        u_traj=Embedding(u=u_traj, view=l_traj.view),
        u_flow=Embedding(u=u_flow, view=l_flow.view),
        objective_trace=tuple(trace),
    )


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    out = x.copy()
    nz = norms > 0
    out[nz] = out[nz] / norms[nz, None]
    return out


def _farthest_point_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d))  # ties resolve to the lowest index
        chosen.append(nxt)
        d = np.minimum(d, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[chosen].copy()


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    n, k = x.shape[0], centers.shape[0]
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)  # ties: lowest center index
        # re-seat empty clusters with the point farthest from its center
        for c in range(k):
            if not np.any(new_labels == c):
                dist_own = d2[np.arange(n), new_labels]
                counts = np.bincount(new_labels, minlength=k)
                movable = counts[new_labels] > 1
                if not movable.any():
                    continue
                cand = np.where(movable, dist_own, -np.inf)
                new_labels[int(np.argmax(cand))] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            pts = x[labels == c]
            if len(pts):
                centers[c] = pts.mean(axis=0)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    wcss = float(d2[np.arange(n), labels].sum())
    return labels, wcss


def _kmeans(x: np.ndarray, k: int, seed: int, restarts: int, max_iter: int = 100) -> np.ndarray:
    best_labels, best_wcss = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centers = _farthest_point_init(x, k, rng)
        labels, wcss = _lloyd(x, centers, max_iter)
        if wcss < best_wcss:  # strict: ties keep the first-found solution
            best_labels, best_wcss = labels, wcss
    return best_labels


def cluster_objects(u_traj: Embedding, u_flow: Embedding | None, k_motions: int,
                    seed: int, restarts: int, background_index: int) -> ClusterAssignment:
    """K-means over the (concatenated) spectral embedding rows.

    Rows are length-normalized (zero rows stay zero); seeding is greedy
    farthest-point from a generator derived from ``seed``; the restart
    with the lowest within-cluster sum of squares wins, ties going to
    the first found. Objects sharing the background object's cluster get
    ``moving = False``.
    """
    parts = [u_traj.u] if u_flow is None else [u_traj.u, u_flow.u]
    x = _normalize_rows(np.hstack(parts))
    labels = _kmeans(x, k_motions, seed, restarts)
    moving = labels != labels[background_index]
    return ClusterAssignment(labels=labels, moving=moving)


# ---------------------------------------------------------------------------
# pipeline orchestration


def _track_lookup(tracks):
    """Track -> {frame: row index} for O(1) frame membership tests."""
    return [dict(zip(t.frames.tolist(), range(len(t.frames)))) for t in tracks]


def _traj_correspondences(bundle: SceneBundle, pair: tuple[int, int]) -> list[list[Correspondence]]:
    m0, m1 = pair
    by_obj = bundle.tracks.by_object()
    out = []
    for obj in bundle.objects:
        corrs = []
        for t in by_obj.get(obj.id, []):
            idx = {f: i for i, f in enumerate(t.frames.tolist())}
            if m0 in idx and m1 in idx:
                x0, y0 = t.xy[idx[m0]]
                x1, y1 = t.xy[idx[m1]]
                nx0, ny0 = normalize_xy(x0, y0, bundle.width, bundle.height)
                nx1, ny1 = normalize_xy(x1, y1, bundle.width, bundle.height)
                corrs.append(Correspondence(
                    p=np.array([float(nx0), float(ny0), 1.0]),
                    p_prime=np.array([float(nx1), float(ny1), 1.0]),
                ))
        out.append(corrs)
    return out


def _seed_key(*parts: int) -> list[int]:
    return [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]


def _derived_seed(*parts: int) -> int:
    ss = np.random.SeedSequence(_seed_key(*parts))
    return int(ss.generate_state(2, np.uint64)[0])


def _flow_samples(bundle: SceneBundle, frame: int, cfg: EngineConfig) -> list[list[FlowSample]]:
    lm = bundle.label_maps[frame].labels
    flow = bundle.flow_fields[frame]
    depth = bundle.depth_maps[frame].z
    s = float(max(bundle.width, bundle.height))
    out = []
    for obj in bundle.objects:
        ys, xs = np.nonzero(lm == obj.id)
        n = xs.size
        if n < cfg.min_object_pixels:
            out.append([])
            continue
        if n > cfg.flow_sample_cap:
            rng = np.random.default_rng(_seed_key(cfg.seed, 1, obj.id, frame))
            sel = np.sort(rng.choice(n, size=cfg.flow_sample_cap, replace=False))
            xs, ys = xs[sel], ys[sel]
        nx, ny = normalize_xy(xs, ys, bundle.width, bundle.height)
        inv_z = np.minimum(1.0 / depth[ys, xs].astype(float), INV_DEPTH_CAP)
        u = flow.u[ys, xs].astype(float) / s
        v = flow.v[ys, xs].astype(float) / s
        out.append([FlowSample(float(a), float(b), float(w), float(uu), float(vv))
                    for a, b, w, uu, vv in zip(nx, ny, inv_z, u, v)])
    return out


def _trajectory_view(bundle: SceneBundle, cfg: EngineConfig, t: int):
    gap = min(cfg.frame_gap_traj, bundle.frame_count - 1)
    pairs = [(m, m + gap) for m in range(bundle.frame_count - gap)]
    residuals, scores = [], []
    evidence = np.zeros(len(bundle.objects), dtype=bool)
    for pair in pairs:
        corrs = _traj_correspondences(bundle, pair)
        models = []
        for obj, c in zip(bundle.objects, corrs):
            rcfg = dataclasses.replace(
                cfg.ransac, rng_seed=_derived_seed(cfg.seed, 0, obj.id, pair[0]))
            models.append(ransac_fit_fundamental(c, rcfg))
        r = aff.residual_matrix_traj(models, corrs, cfg.min_track_points)
        evidence |= r.valid.any(axis=0)
        residuals.append(r)
        scores.append(aff.ork_scores(r, t))
    matrix = aff.normalize_affinity(aff.accumulate_affinity(scores, aff.VIEW_TRAJECTORY))
    return matrix, evidence, pairs, residuals, scores


def _flow_view(bundle: SceneBundle, cfg: EngineConfig, t: int):
    pairs = [(m, m + 1) for m in range(bundle.frame_count - 1)]
    residuals, scores = [], []
    evidence = np.zeros(len(bundle.objects), dtype=bool)
    for pair in pairs:
        samples = _flow_samples(bundle, pair[0], cfg)
        models = []
        for s in samples:
            try:
                models.append(fit_flow_depth_model(s))
            except InsufficientSamples:
                models.append(None)
        r = aff.residual_matrix_flow(models, samples)
        evidence |= r.valid.any(axis=0)
        residuals.append(r)
        scores.append(aff.ork_scores(r, t))
    matrix = aff.normalize_affinity(aff.accumulate_affinity(scores, aff.VIEW_FLOW))
    return matrix, evidence, pairs, residuals, scores


def _moving_label_maps(bundle: SceneBundle, assignment: ClusterAssignment) -> list[np.ndarray]:
    """Dense per-frame maps of moving clusters; 0 is the static cluster."""
    bg_cluster = assignment.labels[
        [o.is_background for o in bundle.objects].index(True)]
    remap = {}
    for c in sorted(set(assignment.labels.tolist())):
        if c != bg_cluster:
            remap[c] = len(remap) + 1
    id_to_cluster = {o.id: int(assignment.labels[i]) for i, o in enumerate(bundle.objects)}
    maps = []
    for lm in bundle.label_maps:
        out = np.zeros_like(lm.labels, dtype=np.uint16)
        for oid, c in id_to_cluster.items():
            if c in remap:
                out[lm.labels == oid] = remap[c]
        maps.append(out)
    return maps


def segment_scene(bundle: SceneBundle, cfg: EngineConfig,
                  views=(aff.VIEW_TRAJECTORY, aff.VIEW_FLOW),
                  debug_sink: dict | None = None):
    """Run the full pipeline on one bundle.

    Per frame pair and view: fit per-object models, cross-evaluate into
    residual matrices, score with the ordered residual kernel, and
    accumulate per-view affinities. With both views the embeddings are
    fused by co-regularized spectral clustering; a single view uses its
    own spectral embedding. Returns a :class:`SegmentationResult`, which
    unpacks as the cluster assignment and the per-frame label maps of
    the moving clusters (0 = static).

    Raises:
        NotEnoughEvidence: some object produced no usable residuals in
            any frame pair of any requested view.
    """
    views = tuple(views)
    if not views:
        raise ValueError("at least one view required")
    unknown = set(views) - {aff.VIEW_TRAJECTORY, aff.VIEW_FLOW}
    if unknown:
        raise ValueError(f"unknown views: {sorted(unknown)}")

    k = len(bundle.objects)
    t = cfg.resolve_ork_t(k)
    k_motions = bundle.num_motions
    bg_index = [o.is_background for o in bundle.objects].index(True)

    matrices: dict[str, aff.AffinityMatrix] = {}
    evidence = np.zeros(k, dtype=bool)
    for view in views:
        builder = _trajectory_view if view == aff.VIEW_TRAJECTORY else _flow_view
        matrix, ev, pairs, residuals, scores = builder(bundle, cfg, t)
        matrices[view] = matrix
        evidence |= ev
        if debug_sink is not None:
            debug_sink[view] = aff.debug_payload(view, pairs, residuals, scores, matrix)

    if not evidence.all():
        missing = [bundle.objects[i].id for i in np.flatnonzero(~evidence)]
        raise NotEnoughEvidence(
            f"objects {missing} have no valid residuals in any requested view")

    if len(views) == 2:
        emb = coregularized_embeddings(
            normalized_laplacian(matrices[aff.VIEW_TRAJECTORY]),
            normalized_laplacian(matrices[aff.VIEW_FLOW]),
            k_motions, cfg.coreg_lambda, cfg.coreg_iters)
        assignment = cluster_objects(emb.u_traj, emb.u_flow, k_motions,
                                     cfg.seed, cfg.kmeans_restarts, bg_index)
    else:
        view = views[0]
        lap = normalized_laplacian(matrices[view])
        single = Embedding(u=top_eigenvectors(lap.l, k_motions), view=view)
        assignment = cluster_objects(single, None, k_motions,
                                     cfg.seed, cfg.kmeans_restarts, bg_index)

    return SegmentationResult(
        assignment=assignment,
        moving_maps=_moving_label_maps(bundle, assignment),
        affinities=matrices,
    )
