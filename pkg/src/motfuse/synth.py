"""Deterministic synthetic rigid scenes with analytic ground truth.

Scenes are built from planar patches ray-traced through a pinhole
camera: masks come from a per-pixel z-buffer, depth is camera-frame z
(globally rescaled to unit mean, mimicking relative monocular depth),
and flow is the exact projected displacement of each pixel's 3D point.
Point trajectories sample each body's surface with small out-of-plane
relief so the per-object correspondences are never coplanar, which
would make fundamental-matrix estimation degenerate by construction.

Scenario presets use pure translations (no camera or object rotation)
and patch orientations chosen so every object's true flow lies exactly
in the linear flow+depth model family; with zero noise both motion
models then reproduce their own objects' cues to machine precision.
The generator is fully determined by the scenario seed.
"""

from __future__ import annotations

from dataclasses import dataclass

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

SCENARIOS = ("parallax", "epipolar_degenerate", "multi_object", "static", "random")

WIDTH = 160
HEIGHT = 120
FOCAL = 1.0
TRACK_POINTS = 32
MIN_SCENE_DEPTH = 0.05


class InvalidSpec(ValueError):
    """Scenario parameters outside what the presets support."""


class BehindCamera(ValueError):
    """Projection of a point at or behind the camera plane."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; pose per frame as world->camera rotation + center."""

    focal: float
    width: int
    height: int
    rotations: np.ndarray  # (T, 3, 3), orthonormal, det +1
    centers: np.ndarray    # (T, 3) camera centers in scene units


@dataclass(frozen=True)
class RigidBody:
    """A planar patch moved rigidly; ground truth for one object.

    The patch is a rectangle around ``center`` spanned by two in-plane
    axes orthogonal to ``normal``. Pose per frame is applied to the
    frame-0 geometry (rotation about the patch center, then translation).
    """

    id: int
    name: str
    center: np.ndarray        # (3,)
    normal: np.ndarray        # (3,), unit, facing the camera (-z side)
    extent: tuple[float, float]
    rotations: np.ndarray     # (T, 3, 3)
    translations: np.ndarray  # (T, 3)
    motion_group: int
    is_background: bool = False
    # amplitude of the out-of-plane surface relief used for track points;
    # without it per-object correspondences are coplanar and fundamental-
    # matrix estimation is degenerate by construction
    relief: float = 0.1


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    seed: int = 0
    num_objects: int = 4
    frame_count: int = 6
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise InvalidSpec(f"unknown scenario {self.name!r}")
        if self.num_objects < 1:
            raise InvalidSpec("num_objects must be >= 1")
        if self.frame_count < 2:
            raise InvalidSpec("frame_count must be >= 2")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")


def project(camera: CameraModel, frame: int, point3d) -> tuple[float, float, float]:
    """Perspective projection with the frame's pose; returns (x, y, depth).

    Raises:
        BehindCamera: camera-frame z not positive.
    """
    p = np.asarray(point3d, dtype=float)
    pc = camera.rotations[frame] @ (p - camera.centers[frame])
    if pc[2] <= 0:
        raise BehindCamera(f"point {point3d} has camera depth {pc[2]:.4g}")
    s = float(max(camera.width, camera.height))
    x = s * camera.focal * pc[0] / pc[2] + camera.width / 2.0
    y = s * camera.focal * pc[1] / pc[2] + camera.height / 2.0
    return float(x), float(y), float(pc[2])


def _plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = normal / np.linalg.norm(normal)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def _body_frame_geometry(body: RigidBody, frame: int):
    """Patch center, normal and in-plane axes in world coordinates at ``frame``."""
    r = body.rotations[frame]
    t = body.translations[frame]
    center = body.center + t
    normal = r @ body.normal
    u0, v0 = _plane_axes(body.normal)
    return center, normal, r @ u0, r @ v0


def _transform_between(body: RigidBody, m0: int, m1: int):
    """Rigid map taking the body's world points at frame m0 to frame m1."""
    r0, t0 = body.rotations[m0], body.translations[m0]
    r1, t1 = body.rotations[m1], body.translations[m1]
    r = r1 @ r0.T
    # x1 = r1 (r0^T (x0 - c - t0)) + c + t1  with c = body.center
    def apply(pts):
        base = (pts - body.center - t0) @ r0
        return base @ r1.T + body.center + t1
    return apply


def _ray_grid(camera: CameraModel, frame: int) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray directions (z-normalized in camera frame) per pixel."""
    s = float(max(camera.width, camera.height))
    xs = (np.arange(camera.width) - camera.width / 2.0) / (s * camera.focal)
    ys = (np.arange(camera.height) - camera.height / 2.0) / (s * camera.focal)
    gx, gy = np.meshgrid(xs, ys)
    dirs_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    dirs_world = dirs_cam @ camera.rotations[frame]
    return dirs_world, camera.centers[frame]


def _intersect_patch(body: RigidBody, frame: int, dirs: np.ndarray, origin: np.ndarray):
    """Per-pixel ray/patch intersection; depth is +inf where the ray misses."""
    center, normal, u, v = _body_frame_geometry(body, frame)
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = ((center - origin) @ normal) / denom
    pts = origin + lam[..., None] * dirs
    rel = pts - center
    a = rel @ u
    b = rel @ v
    hit = (np.abs(denom) > 1e-12) & (lam > MIN_SCENE_DEPTH) \
        & (np.abs(a) <= body.extent[0]) & (np.abs(b) <= body.extent[1])
    depth = np.where(hit, lam, np.inf)
    return depth, pts


def _render_frame(camera: CameraModel, bodies, frame: int):
    dirs, origin = _ray_grid(camera, frame)
    h, w = dirs.shape[:2]
    depth = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.uint16)
    points = np.zeros((h, w, 3))
    for body in bodies:
        d, pts = _intersect_patch(body, frame, dirs, origin)
        closer = d < depth
        depth[closer] = d[closer]
        labels[closer] = body.id
        points[closer] = pts[closer]
    return labels, depth, points


def _render_flow(camera: CameraModel, bodies, frame: int,
                 labels: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact pixel displacement frame -> frame+1 for the visible surface."""
    h, w = labels.shape
    s = float(max(camera.width, camera.height))
    r1 = camera.rotations[frame + 1]
    c1 = camera.centers[frame + 1]
    u = np.zeros((h, w), dtype=np.float64)
    v = np.zeros((h, w), dtype=np.float64)
    gx, gy = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    for body in bodies:
        mask = labels == body.id
        if not mask.any():
            continue
        moved = _transform_between(body, frame, frame + 1)(points[mask])
        pc = (moved - c1) @ r1.T
        x1 = s * camera.focal * pc[:, 0] / pc[:, 2] + camera.width / 2.0
        y1 = s * camera.focal * pc[:, 1] / pc[:, 2] + camera.height / 2.0
        u[mask] = x1 - gx[mask]
        v[mask] = y1 - gy[mask]
    return u, v


def _track_body_points(body: RigidBody, rng: np.random.Generator,
                       n: int) -> np.ndarray:
    """Frame-0 world points on the body: in-plane spread + surface relief.

    Sampling is clamped to the patch region that can project into the
    image at the body's depth, which matters for the huge background.
    """
    u, v = _plane_axes(body.normal)
    amp_a = min(0.72 * body.extent[0], 0.75 * body.center[2])
    amp_b = min(0.72 * body.extent[1], 0.75 * body.center[2])
    a = rng.uniform(-amp_a, amp_a, size=n)
    b = rng.uniform(-amp_b, amp_b, size=n)
    relief = rng.uniform(-body.relief, body.relief, size=n)
    return body.center + np.outer(a, u) + np.outer(b, v) + np.outer(relief, body.normal)


def _generate_tracks(camera: CameraModel, bodies, frames: int,
                     label_maps, rng: np.random.Generator,
                     noise_rng: np.random.Generator,
                     noise_sigma: float, edge_margin: float = 10.0):
    """Project per-body surface points through every frame.

    Candidate points are rejected unless their noiseless projection is
    visible (front-most, inside their own mask, away from the borders)
    in every frame, so clean tracks survive any downstream sanitation.
    Noise comes from a separate stream; geometry does not depend on it.
    """
    tracks = []
    track_id = 0
    for body in bodies:
        accepted = 0
        attempts = 0
        while accepted < TRACK_POINTS and attempts < 120:
            attempts += 1
            candidates = _track_body_points(body, rng, TRACK_POINTS * 2)
            for p0 in candidates:
                if accepted == TRACK_POINTS:
                    break
                xs, ys = [], []
                ok = True
                for f in range(frames):
                    moved = _transform_between(body, 0, f)(p0[None, :])[0]
                    try:
                        x, y, _ = project(camera, f, moved)
                    except BehindCamera:
                        ok = False
                        break
                    if not (edge_margin <= x <= camera.width - 1 - edge_margin
                            and edge_margin <= y <= camera.height - 1 - edge_margin):
                        ok = False
                        break
                    if label_maps[f][int(round(y)), int(round(x))] != body.id:
                        ok = False
                        break
                    xs.append(x)
                    ys.append(y)
                if not ok:
                    continue
                xy = np.column_stack([xs, ys])
                if noise_sigma > 0:
                    xy = xy + noise_rng.normal(0.0, noise_sigma, size=xy.shape)
                tracks.append(Track(
                    track_id=track_id,
                    object_id=body.id,
                    frames=np.arange(frames, dtype=np.int32),
                    xy=xy,
                ))
                track_id += 1
                accepted += 1
        if accepted < 16:
            raise InvalidSpec(
                f"could not place 16 visible track points on object {body.id}")
    return TrackSet(tracks=tuple(tracks))


def _static_pose(frames: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tile(np.eye(3), (frames, 1, 1)), np.zeros((frames, 3))


def _translating_pose(frames: int, velocity) -> tuple[np.ndarray, np.ndarray]:
    steps = np.arange(frames)[:, None] * np.asarray(velocity, dtype=float)[None, :]
    return np.tile(np.eye(3), (frames, 1, 1)), steps


def _background_body(frames: int, z: float, normal, extent: float = 60.0) -> RigidBody:
    r, t = _static_pose(frames)
    n = np.asarray(normal, dtype=float)
    return RigidBody(
        id=1, name="background",
        center=np.array([0.0, 0.0, z]),
        normal=n / np.linalg.norm(n),
        extent=(extent, extent),
        rotations=r, translations=t,
        motion_group=0, is_background=True,
        relief=0.22 * z)


def _foreground_body(obj_id: int, frames: int, center, normal, extent,
                     velocity, group: int) -> RigidBody:
    r, t = _translating_pose(frames, velocity)
    n = np.asarray(normal, dtype=float)
    center = np.asarray(center, dtype=float)
    return RigidBody(
        id=obj_id, name=f"object_{obj_id}",
        center=center,
        normal=n / np.linalg.norm(n),
        extent=extent,
        rotations=r, translations=t,
        motion_group=group,
        relief=0.2 * center[2])


def _assign_slots(n_movers: int, n_static: int, rng: np.random.Generator):
    """Normalized image positions keeping foreground patches disjoint.

    Movers get the most central slots so their image drift stays well
    inside the frame; statics take the outer ones.
    """
    slots = [(-0.13, 0.01), (0.04, -0.15), (-0.02, 0.16), (0.16, 0.03),
             (-0.27, -0.13), (0.26, 0.12), (-0.3, 0.14), (0.3, -0.15)]
    n = n_movers + n_static
    if n > len(slots):
        raise InvalidSpec(f"presets support at most {len(slots) + 1} objects")
    mover_slots = [slots[i] for i in rng.permutation(min(n_movers + 1, n))[:n_movers]]
    rest = [s for s in slots[:n] if s not in mover_slots]
    order = rng.permutation(len(rest))
    return mover_slots, [rest[i] for i in order][:n_static]


def _spread_angles(n: int, rng: np.random.Generator) -> np.ndarray:
    """Motion directions kept at least ~2*pi/n apart so no two movers
    share a translation line (which the epipolar view cannot split)."""
    base = rng.uniform(0, 2 * np.pi)
    return base + np.arange(n) * (2 * np.pi / max(n, 1)) \
        + rng.uniform(-0.25, 0.25, size=n)


def _fg_geometry(slot, z: float, slant, rng: np.random.Generator):
    """Patch center/normal/extent putting the patch at a normalized slot.

    Slanted patches vary 1/z across the surface, which is what makes the
    flow+depth coefficients identifiable from one object's samples.
    """
    cx = slot[0] * z / FOCAL
    cy = slot[1] * z / FOCAL
    ex = 0.13 * z + rng.uniform(-0.01, 0.01) * z
    ey = 0.105 * z + rng.uniform(-0.01, 0.01) * z
    if slant:
        normal = np.array([rng.uniform(0.55, 0.85) * rng.choice([-1, 1]),
                           rng.uniform(0.45, 0.7) * rng.choice([-1, 1]), -1.0])
    else:
        normal = np.array([0.0, 0.0, -1.0])
    return np.array([cx, cy, z]), normal, (ex, ey)


def _build_scenario(spec: ScenarioSpec):
    """Camera path, bodies, and motion-group labels for one preset.

    Motions are parameterized by per-video totals and divided by the
    number of frame steps, so objects stay in frame for any length.
    Movers drift roughly toward the image center.
    """
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 0])
    frames = spec.frame_count
    steps = frames - 1
    k = spec.num_objects
    n_fg = k - 1

    bodies: list[RigidBody] = []
    cam_r, cam_c = _static_pose(frames)
    next_id = 2

    def add_static(slot, z, slant=True):
        nonlocal next_id
        c, n, e = _fg_geometry(slot, z, slant=slant, rng=rng)
        bodies.append(_foreground_body(next_id, frames, c, n, e, (0, 0, 0), 0))
        next_id += 1

    def add_mover(slot, z, vel, group, slant=True):
        nonlocal next_id
        c, n, e = _fg_geometry(slot, z, slant=slant, rng=rng)
        bodies.append(_foreground_body(next_id, frames, c, n, e, vel, group))
        next_id += 1

    if spec.name == "static":
        bodies.append(_background_body(frames, 6.0, (0.2, 0.1, -1.0)))
        _, static_slots = _assign_slots(0, n_fg, rng)
        for slot in static_slots:
            add_static(slot, rng.uniform(2.0, 4.5))
        num_motions = 1

    elif spec.name == "multi_object":
        if k < 2:
            raise InvalidSpec("multi_object needs at least 2 objects")
        bodies.append(_background_body(frames, 6.0, (0.25, 0.12, -1.0)))
        cam_total = np.array([rng.uniform(0.18, 0.26) * rng.choice([-1, 1]),
                              rng.uniform(-0.12, 0.12), 0.0])
        cam_r, cam_c = _translating_pose(frames, cam_total / steps)
        n_static = 1 if n_fg >= 2 else 0
        n_movers = n_fg - n_static
        mover_slots, static_slots = _assign_slots(n_movers, n_static, rng)
        angles = _spread_angles(n_movers, rng)
        for i, slot in enumerate(mover_slots):
            z = rng.uniform(2.2, 4.2)
            # ~0.10-0.14 normalized image drift over the video
            drift = rng.uniform(0.10, 0.14) * np.array(
                [np.cos(angles[i]), np.sin(angles[i])])
            add_mover(slot, z, np.append(drift * z / steps, 0.0), i + 1)
        for slot in static_slots:
            add_static(slot, rng.uniform(2.2, 4.2))
        num_motions = n_movers + 1

    elif spec.name == "epipolar_degenerate":
        if k < 2:
            raise InvalidSpec("epipolar_degenerate needs at least 2 objects")
        bodies.append(_background_body(frames, 6.0, (0.0, 0.2, -1.0)))
        tau_total = rng.uniform(0.36, 0.46) * rng.choice([-1, 1])
        cam_r, cam_c = _translating_pose(frames, (tau_total / steps, 0.0, 0.0))
        mover_slots, static_slots = _assign_slots(1, n_fg - 1, rng)
        # the mover translates along the same axis as the camera, so its
        # correspondences satisfy the background's epipolar geometry; its
        # speed is chosen so that its image displacement equals that of a
        # virtual static object at an in-range depth, leaving trajectories
        # with no magnitude cue either. flow+depth still separates it,
        # because at the mover's true (nearer) depth that displacement is
        # wrong. it is also the nearest object, so it is never occluded.
        slot = mover_slots[0]
        z = rng.uniform(1.6, 1.9)
        z_virtual = rng.uniform(3.0, 3.9)
        drift = tau_total * (1.0 / z_virtual - 1.0 / z)
        vel = (tau_total / steps + drift * z / steps, 0.0, 0.0)
        add_mover(slot, z, vel, 1)
        for slot in static_slots:
            add_static(slot, rng.uniform(2.6, 4.2))
        num_motions = 2

    elif spec.name == "parallax":
        if k < 2:
            raise InvalidSpec("parallax needs at least 2 objects")
        # fronto-parallel patches keep the flow model exact under the
        # forward (depth-axis) camera motion that creates the parallax
        bodies.append(_background_body(frames, 7.0, (0.0, 0.0, -1.0)))
        tau_total = rng.uniform(0.5, 0.7)
        cam_r, cam_c = _translating_pose(frames, (0.0, 0.0, tau_total / steps))
        mover_slots, static_slots = _assign_slots(1, n_fg - 1, rng)
        slot = mover_slots[0]
        z = 2.5 + rng.uniform(-0.15, 0.15)
        ang = _spread_angles(1, rng)[0]
        drift = rng.uniform(0.2, 0.24) * np.array([np.cos(ang), np.sin(ang)])
        drift[0] = abs(drift[0]) * (-np.sign(slot[0]) if abs(slot[0]) > 0.05 else 1.0)
        add_mover(slot, z, np.append(drift * z / steps, 0.0), 1, slant=False)
        # nearest static decoy goes to the outermost slot so the mover's
        # sweep through the central region is never occluded
        static_depths = sorted([1.9, 4.6, 2.9, 4.0, 3.3, 4.3, 2.2][: len(static_slots)])
        by_radius = sorted(static_slots, key=lambda s: -(s[0] ** 2 + s[1] ** 2))
        for depth, slot in zip(static_depths, by_radius):
            add_static(slot, depth + rng.uniform(-0.1, 0.1), slant=False)
        num_motions = 2

    else:  # random
        bodies.append(_background_body(frames, 6.0, (0.2, -0.1, -1.0)))
        cam_total = np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.15, 0.15), 0.0])
        cam_r, cam_c = _translating_pose(frames, cam_total / steps)
        n_movers = sum(1 for _ in range(n_fg) if rng.random() >= 0.4)
        mover_slots, static_slots = _assign_slots(n_movers, n_fg - n_movers, rng)
        angles = _spread_angles(n_movers, rng)
        for i, slot in enumerate(mover_slots):
            z = rng.uniform(2.0, 4.5)
            drift = rng.uniform(0.10, 0.15) * np.array(
                [np.cos(angles[i]), np.sin(angles[i])])
            add_mover(slot, z, np.append(drift * z / steps, 0.0), i + 1)
        for slot in static_slots:
            add_static(slot, rng.uniform(2.0, 4.5))
        num_motions = n_movers + 1

    camera = CameraModel(focal=FOCAL, width=WIDTH, height=HEIGHT,
                         rotations=cam_r, centers=cam_c)
    return camera, bodies, num_motions


def generate_scene(spec: ScenarioSpec):
    """Build a :class:`SceneBundle` plus ground-truth motion groups.

    Returns (bundle, groups) with ``groups`` mapping object id to its
    true motion-group label (the background's group is 0). The same
    spec always produces byte-identical bundles.

    Raises:
        InvalidSpec: the preset cannot be realized with these parameters.
    """
    camera, bodies, num_motions = _build_scenario(spec)
    frames = spec.frame_count

    label_maps, depth_maps, flow_u, flow_v = [], [], [], []
    surface_points = []
    for f in range(frames):
        labels, depth, points = _render_frame(camera, bodies, f)
        if not np.isfinite(depth).all():
            raise InvalidSpec("scene does not cover the full frame; "
                              "background patch too small")
        label_maps.append(labels)
        depth_maps.append(depth)
        surface_points.append(points)
    for f in range(frames - 1):
        u, v = _render_flow(camera, bodies, f, label_maps[f], surface_points[f])
        flow_u.append(u)
        flow_v.append(v)

    # emulate relative monocular depth: one global rescale to unit mean
    scale = float(np.mean(depth_maps))
    depth_maps = [d / scale for d in depth_maps]

    track_rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 1])
    noise_rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 2])
    tracks = _generate_tracks(camera, bodies, frames, label_maps, track_rng,
                              noise_rng, spec.noise_sigma)

    if spec.noise_sigma > 0:
        for f in range(frames - 1):
            flow_u[f] = flow_u[f] + noise_rng.normal(0, spec.noise_sigma, flow_u[f].shape)
            flow_v[f] = flow_v[f] + noise_rng.normal(0, spec.noise_sigma, flow_v[f].shape)

    objects = tuple(
        ObjectMeta(id=b.id, name=b.name, is_background=b.is_background)
        for b in bodies)
    bundle = SceneBundle(
        width=WIDTH, height=HEIGHT, frame_count=frames,
        objects=objects, num_motions=num_motions,
        label_maps=tuple(LabelMap(labels=m) for m in label_maps),
        flow_fields=tuple(FlowField(u=u.astype(np.float32), v=v.astype(np.float32))
                          for u, v in zip(flow_u, flow_v)),
        depth_maps=tuple(DepthField(z=d.astype(np.float32)) for d in depth_maps),
        tracks=tracks,
    )
    groups = {b.id: b.motion_group for b in bodies}
    return bundle, groups
