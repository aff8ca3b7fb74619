"""Shared domain types for motion-segmentation scene bundles.

A scene bundle holds one video's worth of precomputed motion cues:
per-frame instance label maps, dense optical flow, relative depth, and
sparse point trajectories, together with object metadata and the number
of motion groups to recover. All types are treated as immutable after
construction and are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .epipolar import RansacConfig


@dataclass(frozen=True)
class ObjectMeta:
    """One tracked object; ``id`` is its pixel value in the label maps."""

    id: int
    name: str
    is_background: bool = False


@dataclass(frozen=True)
class LabelMap:
    """Per-frame instance segmentation; 0 marks unassigned pixels."""

    labels: np.ndarray  # (h, w) uint16

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class FlowField:
    """Dense optical flow from frame m to m+1, in pixels."""

    u: np.ndarray  # (h, w) float32
    v: np.ndarray  # (h, w) float32


@dataclass(frozen=True)
class DepthField:
    """Per-pixel relative depth; positive, unitless scale."""

    z: np.ndarray  # (h, w) float32


@dataclass(frozen=True)
class Track:
    """One tracked point: coordinates per frame, tied to an object."""

    track_id: int
    object_id: int
    frames: np.ndarray  # (n,) int32, strictly increasing
    xy: np.ndarray      # (n, 2) float64, pixel coordinates


@dataclass(frozen=True)
class TrackSet:
    tracks: tuple[Track, ...]

    def by_object(self) -> dict[int, list[Track]]:
        out: dict[int, list[Track]] = {}
        for t in self.tracks:
            out.setdefault(t.object_id, []).append(t)
        return out


@dataclass(frozen=True)
class SceneBundle:
    """All motion cues for one video.

    ``label_maps`` and ``depth_maps`` have one entry per frame;
    ``flow_fields`` has ``frame_count - 1`` entries (frame m to m+1).
    """

    width: int
    height: int
    frame_count: int
    objects: tuple[ObjectMeta, ...]
    num_motions: int
    label_maps: tuple[LabelMap, ...]
    flow_fields: tuple[FlowField, ...]
    depth_maps: tuple[DepthField, ...]
    tracks: TrackSet

    def background(self) -> ObjectMeta:
        for o in self.objects:
            if o.is_background:
                return o
        raise ValueError("bundle has no background object")

    def object_index(self) -> dict[int, int]:
        """Object id -> position in ``objects``."""
        return {o.id: i for i, o in enumerate(self.objects)}


@dataclass(frozen=True)
class EngineConfig:
    """Tunables for the segmentation pipeline.

    ``frame_gap_traj`` is the frame gap used for fundamental-matrix
    fitting; flow models are always fit between consecutive frames.
    ``ork_t`` is the inlier-rank cutoff, or "auto" for ceil(k/2).
    """

    frame_gap_traj: int = 3
    ransac: RansacConfig = field(default_factory=RansacConfig)
    ork_t: int | str = "auto"
    coreg_lambda: float = 0.025
    coreg_iters: int = 10
    kmeans_restarts: int = 8
    seed: int = 0
    min_track_points: int = 8
    min_object_pixels: int = 16
    flow_sample_cap: int = 1000

    def __post_init__(self):
        if self.frame_gap_traj < 1:
            raise ValueError("frame_gap_traj must be >= 1")
        if self.coreg_lambda < 0:
            raise ValueError("coreg_lambda must be >= 0")
        for name in ("coreg_iters", "kmeans_restarts", "min_track_points",
                     "min_object_pixels", "flow_sample_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ork_t != "auto" and (not isinstance(self.ork_t, int) or self.ork_t < 1):
            raise ValueError('ork_t must be a positive integer or "auto"')

    def resolve_ork_t(self, k: int) -> int:
        if self.ork_t == "auto":
            return max(1, math.ceil(k / 2))
        return int(self.ork_t)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found in a bundle; data, not an error."""

    field: str
    message: str
    frame: int | None = None


def coordinate_scale(width: int, height: int) -> float:
    return float(max(width, height))


def normalize_xy(x, y, width: int, height: int):
    """Pixel coordinates -> intrinsics-free normalized coordinates.

    The origin moves to the image center and lengths are divided by
    max(width, height), so results are in roughly [-0.5, 0.5].
    """
    s = coordinate_scale(width, height)
    return (np.asarray(x, dtype=float) - width / 2.0) / s, \
           (np.asarray(y, dtype=float) - height / 2.0) / s


def validate_bundle(bundle: SceneBundle) -> list[Violation]:
    """Check every bundle invariant; returns an empty list iff all hold.

    Pure: the same bundle always yields the same violation list.
    """
    out: list[Violation] = []
    w, h, t = bundle.width, bundle.height, bundle.frame_count

    if t < 2:
        out.append(Violation("frame_count", f"frame_count must be >= 2, got {t}"))

    ids = [o.id for o in bundle.objects]
    if len(set(ids)) != len(ids):
        out.append(Violation("objects", "object ids are not unique"))
    if any(o.id <= 0 for o in bundle.objects):
        out.append(Violation("objects", "object ids must be positive (0 is reserved)"))
    n_bg = sum(1 for o in bundle.objects if o.is_background)
    if n_bg != 1:
        out.append(Violation("is_background",
                             f"exactly one background object required, found {n_bg}"))
    if not (1 <= bundle.num_motions <= max(len(bundle.objects), 1)):
        out.append(Violation("num_motions",
                             f"num_motions must be in [1, {len(bundle.objects)}], "
                             f"got {bundle.num_motions}"))

    known = set(ids)

    if len(bundle.label_maps) != t:
        out.append(Violation("label_maps",
                             f"expected {t} label maps, got {len(bundle.label_maps)}"))
    if len(bundle.depth_maps) != t:
        out.append(Violation("depth_maps",
                             f"expected {t} depth maps, got {len(bundle.depth_maps)}"))
    if len(bundle.flow_fields) != t - 1:
        out.append(Violation("flow_fields",
                             f"expected {t - 1} flow fields, got {len(bundle.flow_fields)}"))

    for m, lm in enumerate(bundle.label_maps):
        if lm.labels.shape != (h, w):
            out.append(Violation("LabelMap", f"shape {lm.labels.shape} != ({h}, {w})", m))
            continue
        present = set(np.unique(lm.labels).tolist()) - {0}
        unknown = present - known
        if unknown:
            out.append(Violation("LabelMap",
                                 f"labels {sorted(unknown)} not in bundle objects", m))

    for m, ff in enumerate(bundle.flow_fields):
        if ff.u.shape != (h, w) or ff.v.shape != (h, w):
            out.append(Violation("FlowField", "flow shape does not match bundle", m))

    for m, dm in enumerate(bundle.depth_maps):
        if dm.z.shape != (h, w):
            out.append(Violation("DepthField", "depth shape does not match bundle", m))
            continue
        if not np.all(np.isfinite(dm.z)):
            bad = np.argwhere(~np.isfinite(dm.z))[0]
            out.append(Violation("DepthField",
                                 f"non-finite depth at pixel (x={bad[1]}, y={bad[0]})", m))
        elif np.any(dm.z <= 0):
            bad = np.argwhere(dm.z <= 0)[0]
            out.append(Violation("DepthField",
                                 f"non-positive depth at pixel (x={bad[1]}, y={bad[0]})", m))

    for tr in bundle.tracks.tracks:
        if tr.object_id not in known:
            out.append(Violation("TrackSet",
                                 f"track {tr.track_id} references unknown object "
                                 f"{tr.object_id}"))
        f = np.asarray(tr.frames)
        if f.size and (f.min() < 0 or f.max() >= t):
            out.append(Violation("TrackSet",
                                 f"track {tr.track_id} has frame index outside [0, {t})"))
        if f.size > 1 and not np.all(np.diff(f) > 0):
            out.append(Violation("TrackSet",
                                 f"track {tr.track_id} frames are not strictly increasing"))

    return out
