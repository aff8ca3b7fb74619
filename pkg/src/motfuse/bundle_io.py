"""On-disk scene-bundle formats and trajectory sanitation.

A bundle directory holds ``manifest.json``, ``tracks.json`` and one
little-endian binary per frame and cue:

    MFLO  magic "MFLO" + u32 width + u32 height
          + width*height interleaved (u, v) float32 pairs, row-major
    MDEP  magic "MDEP" + dims + float32 depth per pixel
    MSEG  magic "MSEG" + dims + u16 label per pixel

Readers reject any file whose declared dimensions and element size do
not match the payload; writers emit canonical JSON (sorted keys), so a
read/write round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import (
    DepthField,
    FlowField,
    LabelMap,
    ObjectMeta,
    SceneBundle,
    Track,
    TrackSet,
)

LABELS_PATTERN = "labels_%05d.mseg"
FLOW_PATTERN = "flow_%05d.mflo"
DEPTH_PATTERN = "depth_%05d.mdep"
TRACKS_FILE = "tracks.json"
MANIFEST_FILE = "manifest.json"
GROUND_TRUTH_FILE = "ground_truth.json"

_MAGIC_DTYPES = {
    b"MFLO": ("<f4", 2),
    b"MDEP": ("<f4", 1),
    b"MSEG": ("<u2", 1),
}


class FormatError(ValueError):
    """A binary file's magic, dimensions, or payload size is wrong."""


class ManifestError(ValueError):
    """The manifest is inconsistent or references missing files."""


def _canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_binary(path: Path, magic: bytes, arr: np.ndarray) -> None:
    dtype, channels = _MAGIC_DTYPES[magic]
    h, w = arr.shape[:2]
    expected_shape = (h, w) if channels == 1 else (h, w, channels)
    if arr.shape != expected_shape:
        raise FormatError(f"{path}: array shape {arr.shape} != {expected_shape}")
    payload = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", w, h))
        fh.write(payload)


def read_binary(path: Path, magic: bytes) -> np.ndarray:
    dtype, channels = _MAGIC_DTYPES[magic]
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != magic:
        raise FormatError(f"{path}: bad or missing magic, expected {magic.decode()}")
    w, h = struct.unpack("<II", data[4:12])
    itemsize = np.dtype(dtype).itemsize
    expected = 12 + w * h * channels * itemsize
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data)} bytes, expected {expected} "
                          f"for {w}x{h}")
    arr = np.frombuffer(data[12:], dtype=dtype)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels)).copy()


def _tracks_doc(tracks: TrackSet) -> dict:
    return {
        "tracks": [
            {
                "track_id": t.track_id,
                "object_id": t.object_id,
                "points": [[int(f), float(x), float(y)]
                           for f, (x, y) in zip(t.frames.tolist(), t.xy.tolist())],
            }
            for t in tracks.tracks
        ]
    }


def _tracks_from_doc(doc) -> TrackSet:
    tracks = []
    for entry in doc["tracks"]:
        pts = entry["points"]
        tracks.append(Track(
            track_id=int(entry["track_id"]),
            object_id=int(entry["object_id"]),
            frames=np.array([p[0] for p in pts], dtype=np.int32),
            xy=np.array([[p[1], p[2]] for p in pts], dtype=np.float64).reshape(-1, 2),
        ))
    return TrackSet(tracks=tuple(tracks))


def write_bundle(bundle: SceneBundle, path) -> None:
    """Write a bundle directory (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "width": bundle.width,
        "height": bundle.height,
        "frame_count": bundle.frame_count,
        "num_motions": bundle.num_motions,
        "objects": [
            {"id": o.id, "name": o.name, "is_background": o.is_background}
            for o in bundle.objects
        ],
        "files": {
            "labels": LABELS_PATTERN,
            "flow": FLOW_PATTERN,
            "depth": DEPTH_PATTERN,
            "tracks": TRACKS_FILE,
        },
    }
    (root / MANIFEST_FILE).write_text(_canonical_json(manifest))
    (root / TRACKS_FILE).write_text(_canonical_json(_tracks_doc(bundle.tracks)))
    for m, lm in enumerate(bundle.label_maps):
        write_binary(root / (LABELS_PATTERN % m), b"MSEG", lm.labels)
    for m, dm in enumerate(bundle.depth_maps):
        write_binary(root / (DEPTH_PATTERN % m), b"MDEP", dm.z)
    for m, ff in enumerate(bundle.flow_fields):
        write_binary(root / (FLOW_PATTERN % m), b"MFLO",
                     np.stack([ff.u, ff.v], axis=-1))


def read_bundle(path) -> SceneBundle:
    """Read a bundle directory written by :func:`write_bundle`.

    Raises:
        ManifestError: missing/inconsistent manifest or files.
        FormatError: corrupt binary payloads.
    """
    root = Path(path)
    mf_path = root / MANIFEST_FILE
    if not mf_path.is_file():
        raise ManifestError(f"no manifest at {mf_path}")
    try:
        manifest = json.loads(mf_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mf_path}: {exc}") from exc

    try:
        width = int(manifest["width"])
        height = int(manifest["height"])
        frame_count = int(manifest["frame_count"])
        num_motions = int(manifest["num_motions"])
        objects = tuple(
            ObjectMeta(id=int(o["id"]), name=str(o["name"]),
                       is_background=bool(o["is_background"]))
            for o in manifest["objects"])
        patterns = manifest["files"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{mf_path}: malformed manifest ({exc})") from exc

    if num_motions < 1 or num_motions > len(objects):
        raise ManifestError(
            f"{mf_path}: num_motions {num_motions} outside [1, {len(objects)}]")
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
        raise ManifestError(f"{mf_path}: object ids must be unique and positive")

    def _frame_file(pattern: str, m: int) -> Path:
        p = root / (pattern % m)
        if not p.is_file():
            raise ManifestError(f"missing file {p}")
        return p

    label_maps, depth_maps, flow_fields = [], [], []
    for m in range(frame_count):
        labels = read_binary(_frame_file(patterns["labels"], m), b"MSEG")
        if labels.shape != (height, width):
            raise FormatError(f"labels frame {m}: shape {labels.shape} does not "
                              f"match manifest {height}x{width}")
        label_maps.append(LabelMap(labels=labels))
        z = read_binary(_frame_file(patterns["depth"], m), b"MDEP")
        if z.shape != (height, width):
            raise FormatError(f"depth frame {m}: shape mismatch with manifest")
        depth_maps.append(DepthField(z=z))
    for m in range(frame_count - 1):
        uv = read_binary(_frame_file(patterns["flow"], m), b"MFLO")
        if uv.shape[:2] != (height, width):
            raise FormatError(f"flow frame {m}: shape mismatch with manifest")
        flow_fields.append(FlowField(u=uv[..., 0], v=uv[..., 1]))

    known = set(ids)
    for m, lm in enumerate(label_maps):
        present = set(np.unique(lm.labels).tolist()) - {0}
        if present - known:
            raise ManifestError(
                f"labels frame {m} contain ids {sorted(present - known)} "
                f"not declared in the manifest")

    tracks_path = root / patterns["tracks"]
    if not tracks_path.is_file():
        raise ManifestError(f"missing file {tracks_path}")
    tracks = _tracks_from_doc(json.loads(tracks_path.read_text()))

    return SceneBundle(
        width=width, height=height, frame_count=frame_count,
        objects=objects, num_motions=num_motions,
        label_maps=tuple(label_maps),
        flow_fields=tuple(flow_fields),
        depth_maps=tuple(depth_maps),
        tracks=tracks,
    )


def write_ground_truth(groups: dict[int, int], path) -> None:
    doc = {"motion_groups": {str(k): int(v) for k, v in groups.items()}}
    (Path(path) / GROUND_TRUTH_FILE).write_text(_canonical_json(doc))


def read_ground_truth(path) -> dict[int, int]:
    doc = json.loads((Path(path) / GROUND_TRUTH_FILE).read_text())
    return {int(k): int(v) for k, v in doc["motion_groups"].items()}


def sanitize_tracks(tracks: TrackSet, label_maps, edge_margin: int = 8,
                    min_points: int = 8) -> TrackSet:
    """Drop track points off their object's mask or near the frame edge.

    A point survives only if it is at least ``edge_margin`` pixels from
    every border and its nearest pixel carries the track's object id at
    that frame. Tracks left with fewer than ``min_points`` points are
    removed whole.
    """
    if not label_maps:
        return tracks
    h, w = label_maps[0].labels.shape
    kept = []
    for t in tracks.tracks:
        keep = []
        for i, f in enumerate(t.frames.tolist()):
            x, y = t.xy[i]
            if not (edge_margin <= x <= w - 1 - edge_margin
                    and edge_margin <= y <= h - 1 - edge_margin):
                continue
            ix = min(max(int(round(x)), 0), w - 1)
            iy = min(max(int(round(y)), 0), h - 1)
            if label_maps[f].labels[iy, ix] != t.object_id:
                continue
            keep.append(i)
        if len(keep) >= min_points:
            kept.append(Track(
                track_id=t.track_id,
                object_id=t.object_id,
                frames=t.frames[keep],
                xy=t.xy[keep],
            ))
    return TrackSet(tracks=tuple(kept))
