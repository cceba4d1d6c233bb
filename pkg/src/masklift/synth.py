"""Deterministic synthetic street scenes with exact ground truth.

A scene is a straight-driving ego, a set of box-shaped objects on the
ground plane (static or constant-velocity), pinhole cameras, and a
single-return LiDAR that samples points on the vertical object faces whose
outward normal points back at the sensor. Masks are the filled convex hull
of each object's eight projected corners, with per-pixel occlusion resolved
by nearest ray-box intersection depth. Everything derives from one integer
seed through a counter-mode generator, so output bytes are identical across
runs and machines; the generator is documented field-by-field below for
reproduction outside Python.
"""
import bisect
from dataclasses import dataclass, field
import math
import os

import numpy as np

from . import defaults
from .geometry import CameraModel, SE3Pose, box_corners_3d, normalize_yaw
from .scene_io import (Cuboid, InstanceMask2D, SceneBundle, CameraView,
                       FrameRecord, encode_rle, write_bundle, write_cuboids)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class CounterRng:
    """Keyed counter generator, stable across platforms and versions.

    Draw i (1-based) produces the 64-bit word
        value_i = mix64((seed + i * 0x9E3779B97F4A7C15) mod 2^64)
    where mix64 is the SplitMix64 finalizer: z ^= z >> 30, z *= C1,
    z ^= z >> 27, z *= C2, z ^= z >> 31 with C1 = 0xBF58476D1CE4E5B9 and
    C2 = 0x94D049BB133111EB, all mod 2^64.

    uniform() maps a word to [0, 1) as (value >> 11) * 2**-53. normal()
    is Box-Muller on two words, the first shifted into (0, 1]:
    u1 = ((v1 >> 11) + 1) * 2**-53, u2 = (v2 >> 11) * 2**-53,
    z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = the sine twin, returned in that
    order. integer(n) is floor(uniform() * n) clamped to n - 1. child(tag)
    reseeds as mix64(seed XOR fnv1a64(tag)) with a fresh counter, where
    fnv1a64 is FNV-1a over the tag's UTF-8 bytes.
    """

    def __init__(self, seed):
        self._seed = int(seed) & _MASK64
        self._counter = 0
        self._spare = None

    def u64(self):
        self._counter += 1
        return _mix64((self._seed + self._counter * _GOLDEN) & _MASK64)

    def uniform(self, lo=0.0, hi=1.0):
        u = (self.u64() >> 11) * 2.0 ** -53
        return lo + u * (hi - lo)

    def normal(self, mu=0.0, sigma=1.0):
        if self._spare is not None:
            z, self._spare = self._spare, None
        else:
            u1 = ((self.u64() >> 11) + 1) * 2.0 ** -53
            u2 = (self.u64() >> 11) * 2.0 ** -53
            radius = math.sqrt(-2.0 * math.log(u1))
            angle = 2.0 * math.pi * u2
            z = radius * math.cos(angle)
            self._spare = radius * math.sin(angle)
        return mu + sigma * z

    def integer(self, n):
        if n < 1:
            raise ValueError(f"integer() needs n >= 1, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def child(self, tag):
        return CounterRng(_mix64(self._seed ^ _fnv1a64(tag)))


@dataclass(frozen=True)
class SynthObject:
    track_id: str
    class_label: str
    start: tuple  # (x, y) at t = 0
    yaw: float = 0.0
    speed: float = 0.0  # along yaw, m/s
    dims: tuple = None  # (w, l, h); None = the class shape prior


@dataclass(frozen=True)
class SynthCamera:
    camera_id: str
    mount_yaw_deg: float = 0.0
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 320.0
    cy: float = 180.0
    width: int = 640
    height: int = 360
    mount_z: float = 1.6


def _default_cameras():
    return tuple(SynthCamera(camera_id=f"cam_{int(d):03d}",
                             mount_yaw_deg=float(d))
                 for d in (0.0, 90.0, 180.0, 270.0))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    scene_id: str = "synth-0000"
    n_frames: int = 10
    frame_interval_ns: int = 100_000_000
    ego_start: tuple = (0.0, 0.0)
    ego_yaw: float = 0.0
    ego_speed: float = 2.0
    objects: tuple = ()
    cameras: tuple = field(default_factory=_default_cameras)
    classes: tuple = defaults.CLASSES
    shape_priors: dict = field(
        default_factory=lambda: dict(defaults.SHAPE_PRIORS))
    points_per_object: int = 400
    noise_sigma: float = 0.05
    range_max: float = 60.0
    lanes: object = "auto"  # "auto", or sequence of (lane_id, [[x, y], ...])
    mask_score: float = None  # None = uniform per instance in [0.5, 1)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.frame_interval_ns < 1:
            raise ValueError("frame_interval_ns must be >= 1")
        if self.points_per_object < 1:
            raise ValueError("points_per_object must be >= 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if self.range_max <= 0.0:
            raise ValueError("range_max must be positive")
        if self.mask_score is not None and not 0.0 <= self.mask_score <= 1.0:
            raise ValueError("mask_score must be in [0, 1]")
        missing = [c for c in self.classes if c not in self.shape_priors]
        if missing:
            raise ValueError(f"shape_priors missing classes {missing}")
        for obj in self.objects:
            if obj.class_label not in self.classes:
                raise ValueError(f"object {obj.track_id}: class "
                                 f"{obj.class_label!r} not in classes")

    def object_dims(self, obj):
        if obj.dims is not None:
            return tuple(float(v) for v in obj.dims)
        return tuple(self.shape_priors[obj.class_label])


@dataclass(frozen=True, eq=False)
class _ObjectState:
    track_id: str
    class_label: str
    center: tuple  # (x, y, z) world
    dims: tuple
    yaw: float
    velocity: tuple


def _object_states(cfg, t):
    states = []
    for obj in cfg.objects:
        dims = cfg.object_dims(obj)
        vx = obj.speed * math.cos(obj.yaw)
        vy = obj.speed * math.sin(obj.yaw)
        states.append(_ObjectState(
            track_id=obj.track_id,
            class_label=obj.class_label,
            center=(obj.start[0] + vx * t, obj.start[1] + vy * t,
                    dims[2] / 2.0),
            dims=dims,
            yaw=normalize_yaw(obj.yaw),
            velocity=(vx, vy),
        ))
    return states


def _sample_surface(state, ego_xy, count, sigma, rng):
    """Noisy points on the vertical faces visible from the ego, or None
    when no face looks back at the sensor (ego over the footprint).

    Faces are drawn in proportion to their area as seen from the ego
    (area times the cosine of incidence), the way a scanning beam deposits
    returns: a squarely-faced side soaks up most points while a grazing
    side gets few. This is what radially biases the medoid toward the
    sensor-facing surface.
    """
    corners = box_corners_3d(state.center, state.dims, state.yaw)
    bottom = corners[:4, :2]  # counter-clockwise ring
    z0 = float(corners[0, 2])
    h = state.dims[2]
    faces = []
    for i in range(4):
        a = bottom[i]
        b = bottom[(i + 1) % 4]
        edge = b - a
        normal = (float(edge[1]), float(-edge[0]))  # outward for CCW
        fc = 0.5 * (a + b)
        to_ego = (ego_xy[0] - float(fc[0]), ego_xy[1] - float(fc[1]))
        facing = normal[0] * to_ego[0] + normal[1] * to_ego[1]
        if facing > 0.0:
            length = math.hypot(float(edge[0]), float(edge[1]))
            dist = math.hypot(to_ego[0], to_ego[1])
            # |normal| = edge length, so facing / (length * dist) is the
            # incidence cosine; weight = face area * that cosine
            cosine = facing / (length * dist) if dist > 0.0 else 1.0
            faces.append((a, edge, length * h * cosine))
    if not faces:
        return None
    cumulative = []
    total = 0.0
    for _, _, area in faces:
        total += area
        cumulative.append(total)
    pts = np.empty((count, 3))
    for i in range(count):
        pick = bisect.bisect_right(cumulative, rng.uniform() * total)
        pick = min(pick, len(faces) - 1)
        a, edge, _ = faces[pick]
        s = rng.uniform()
        pts[i, 0] = a[0] + s * edge[0] + rng.normal(0.0, sigma)
        pts[i, 1] = a[1] + s * edge[1] + rng.normal(0.0, sigma)
        pts[i, 2] = z0 + rng.uniform() * h + rng.normal(0.0, sigma)
    return pts


def _convex_hull(points):
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) < 3:
        return pts

    def turn(o, a, b):
        return ((a[0] - o[0]) * (b[1] - o[1])
                - (a[1] - o[1]) * (b[0] - o[0]))

    def build(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and turn(out[-2], out[-1], p) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(reversed(pts))
    return lower[:-1] + upper[:-1]


def _camera_model(sc):
    psi = math.radians(sc.mount_yaw_deg)
    # camera x right, y down, z forward; forward points along mount yaw
    rot = np.array([
        [math.sin(psi), 0.0, math.cos(psi)],
        [-math.cos(psi), 0.0, math.sin(psi)],
        [0.0, -1.0, 0.0],
    ])
    extrinsic = SE3Pose.from_rotation_matrix(rot, (0.0, 0.0, sc.mount_z))
    return CameraModel(camera_id=sc.camera_id, fx=sc.fx, fy=sc.fy,
                       cx=sc.cx, cy=sc.cy, width=sc.width, height=sc.height,
                       extrinsic=extrinsic)


def _ray_box_depths(rows, cols, cam, world_from_cam, state):
    """Camera-frame depth of the first box hit for rays through the given
    pixel centers; falls back to the box-center depth where the ray grazes
    past the box (hull edge pixels)."""
    dirs_cam = np.stack([
        (cols + 0.5 - cam.cx) / cam.fx,
        (rows + 0.5 - cam.cy) / cam.fy,
        np.ones(len(rows)),
    ], axis=1)
    rot_wc = world_from_cam.rotation_matrix
    origin = np.asarray(world_from_cam.translation)
    dirs_w = dirs_cam @ rot_wc.T

    yaw = state.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    rot_ow = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o_local = rot_ow @ (origin - np.asarray(state.center))
    d_local = dirs_w @ rot_ow.T
    half = np.array([state.dims[1] / 2.0, state.dims[0] / 2.0,
                     state.dims[2] / 2.0])  # local x is the length axis

    t_lo = np.full(len(rows), -np.inf)
    t_hi = np.full(len(rows), np.inf)
    ok = np.ones(len(rows), dtype=bool)
    for axis in range(3):
        d = d_local[:, axis]
        o = o_local[axis]
        parallel = np.abs(d) < 1e-12
        ok &= ~(parallel & (np.abs(o) > half[axis]))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[axis] - o) / d
            t2 = (half[axis] - o) / d
        lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
        hi = np.where(parallel, np.inf, np.maximum(t1, t2))
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    ok &= (t_hi >= t_lo) & (t_lo > 1e-9)
    center_cam_z = float(
        world_from_cam.invert().apply(
            np.asarray(state.center)[None, :])[0, 2])
    return np.where(ok, t_lo, center_cam_z)


def _render_masks(states, cam, ego_pose, frame_id, root_rng, cfg):
    world_from_cam = ego_pose.compose(cam.extrinsic)
    cam_from_world = world_from_cam.invert()
    zbuf = np.full((cam.height, cam.width), np.inf)
    owner = np.full((cam.height, cam.width), -1, dtype=np.int64)
    for k, state in enumerate(states):
        corners_w = box_corners_3d(state.center, state.dims, state.yaw)
        corners_c = cam_from_world.apply(corners_w)
        if np.any(corners_c[:, 2] <= 1e-6):
            continue  # partly behind the image plane: no mask here
        u = cam.fx * corners_c[:, 0] / corners_c[:, 2] + cam.cx
        v = cam.fy * corners_c[:, 1] / corners_c[:, 2] + cam.cy
        hull = _convex_hull(np.stack([u, v], axis=1))
        if len(hull) < 3:
            continue
        us = [p[0] for p in hull]
        vs = [p[1] for p in hull]
        c0 = max(0, int(math.floor(min(us))))
        c1 = min(cam.width, int(math.ceil(max(us))))
        r0 = max(0, int(math.floor(min(vs))))
        r1 = min(cam.height, int(math.ceil(max(vs))))
        if c0 >= c1 or r0 >= r1:
            continue
        cc, rr = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
        px = cc + 0.5
        py = rr + 0.5
        inside = np.ones(px.shape, dtype=bool)
        n = len(hull)
        for i in range(n):
            ax, ay = hull[i]
            bx, by = hull[(i + 1) % n]
            inside &= ((bx - ax) * (py - ay)
                       - (by - ay) * (px - ax)) >= 0.0
        if not inside.any():
            continue
        rows = rr[inside].ravel()
        cols = cc[inside].ravel()
        depths = _ray_box_depths(rows, cols, cam, world_from_cam, state)
        closer = depths < zbuf[rows, cols]
        zbuf[rows[closer], cols[closer]] = depths[closer]
        owner[rows[closer], cols[closer]] = k

    masks = []
    for k, state in enumerate(states):
        bitmap = owner == k
        if not bitmap.any():
            continue
        rows, cols = np.nonzero(bitmap)
        bbox = (int(cols.min()), int(rows.min()),
                int(cols.max()) + 1, int(rows.max()) + 1)
        if cfg.mask_score is not None:
            score = cfg.mask_score
        else:
            score = root_rng.child(
                f"score/{frame_id}/{cam.camera_id}/{state.track_id}"
            ).uniform(0.5, 1.0)
        masks.append(InstanceMask2D(
            instance_id=f"{frame_id}:{cam.camera_id}:{state.track_id}",
            class_label=state.class_label,
            score=score,
            bbox=bbox,
            rle=tuple(encode_rle(bitmap)),
            width=cam.width,
            height=cam.height,
        ))
    return masks


def _resolve_lanes(cfg):
    if cfg.lanes != "auto":
        return [(str(lane_id), [[float(x), float(y)] for x, y in line])
                for lane_id, line in cfg.lanes]
    # one long straight lane along each vehicle's trajectory
    lanes = []
    horizon = (cfg.n_frames * cfg.frame_interval_ns * 1e-9
               * max([cfg.ego_speed]
                     + [o.speed for o in cfg.objects], default=0.0))
    reach = 50.0 + horizon
    for obj in cfg.objects:
        if obj.class_label not in defaults.VEHICLE_CLASSES:
            continue
        dx, dy = math.cos(obj.yaw), math.sin(obj.yaw)
        x, y = obj.start
        lanes.append((f"lane_{obj.track_id}",
                      [[x - reach * dx, y - reach * dy],
                       [x + reach * dx, y + reach * dy]]))
    return lanes


def generate_bundle(cfg, out_dir):
    """Write the scene bundle plus its ground-truth cuboids under out_dir.

    Returns (manifest_path, gt_path). Output is a pure function of cfg:
    bytes are identical for identical configurations.
    """
    root_rng = CounterRng(cfg.seed)
    cameras = [_camera_model(sc) for sc in cfg.cameras]
    ego_dir = (math.cos(cfg.ego_yaw), math.sin(cfg.ego_yaw))
    frames_payload = []
    ground_truth = []
    for t_idx in range(cfg.n_frames):
        frame_id = f"{t_idx:06d}"
        t = t_idx * cfg.frame_interval_ns * 1e-9
        ego_xy = (cfg.ego_start[0] + cfg.ego_speed * t * ego_dir[0],
                  cfg.ego_start[1] + cfg.ego_speed * t * ego_dir[1])
        ego_pose = SE3Pose.from_yaw(cfg.ego_yaw,
                                    (ego_xy[0], ego_xy[1], 0.0))
        states = _object_states(cfg, t)

        parts = []
        ego_inv = ego_pose.invert()
        for state in states:
            dist = math.hypot(state.center[0] - ego_xy[0],
                              state.center[1] - ego_xy[1])
            if dist > cfg.range_max:
                continue
            rng = root_rng.child(f"lidar/{frame_id}/{state.track_id}")
            pts_w = _sample_surface(state, ego_xy, cfg.points_per_object,
                                    cfg.noise_sigma, rng)
            if pts_w is None:
                continue
            pts_ego = ego_inv.apply(pts_w)
            intensity = np.array([rng.uniform()
                                  for _ in range(len(pts_ego))])
            parts.append(np.hstack([pts_ego, intensity[:, None]]))
        points = (np.concatenate(parts, axis=0) if parts
                  else np.zeros((0, 4)))

        cam_entries = []
        for cam in cameras:
            masks = _render_masks(states, cam, ego_pose, frame_id,
                                  root_rng, cfg)
            cam_entries.append({"camera": cam, "masks": masks})

        frames_payload.append({
            "frame_id": frame_id,
            "timestamp_ns": t_idx * cfg.frame_interval_ns,
            "ego_pose": ego_pose,
            "points": points,
            "cameras": cam_entries,
        })
        for state in states:
            ground_truth.append(Cuboid(
                frame_id=frame_id,
                class_label=state.class_label,
                score=1.0,
                center=state.center,
                dims=state.dims,
                yaw=state.yaw,
                velocity=state.velocity,
                source="ground_truth",
            ))

    manifest_path = write_bundle(
        out_dir, cfg.scene_id, cfg.classes,
        {cls: list(cfg.shape_priors[cls]) for cls in cfg.classes},
        _resolve_lanes(cfg), frames_payload)
    gt_path = os.path.join(out_dir, "gt.json")
    write_cuboids(ground_truth, gt_path)
    return manifest_path, gt_path


def make_mask_noise(bundle, fp_rate=0.0, fn_rate=0.0, seed=0):
    """In-memory copy of a bundle with mask corruption: every mask is
    dropped with probability fn_rate, and each frame gains one spurious
    high-score rectangle mask with probability fp_rate (so injections are
    Binomial(n_frames, fp_rate)). File paths in the copy still name the
    clean originals; write_bundle persists the corrupted version if needed.
    """
    if not 0.0 <= fp_rate <= 1.0 or not 0.0 <= fn_rate <= 1.0:
        raise ValueError("rates must be in [0, 1]")
    root = CounterRng(seed)
    new_frames = []
    for frame in bundle.frames:
        rng = root.child(f"noise/{frame.frame_id}")
        views = []
        for view in frame.cameras:
            kept = [m for m in view.masks if rng.uniform() >= fn_rate]
            views.append([view.camera, kept, view.masks_path])
        if views and rng.uniform() < fp_rate:
            target = views[rng.integer(len(views))]
            cam = target[0]
            wmax = max(2, cam.width // 4)
            hmax = max(2, cam.height // 4)
            w0 = 2 + rng.integer(wmax - 1) if wmax > 2 else 2
            h0 = 2 + rng.integer(hmax - 1) if hmax > 2 else 2
            x0 = rng.integer(cam.width - w0 + 1)
            y0 = rng.integer(cam.height - h0 + 1)
            bitmap = np.zeros((cam.height, cam.width), dtype=bool)
            bitmap[y0:y0 + h0, x0:x0 + w0] = True
            cls = bundle.classes[rng.integer(len(bundle.classes))]
            target[1] = target[1] + [InstanceMask2D(
                instance_id=f"fp:{frame.frame_id}",
                class_label=cls,
                score=rng.uniform(0.5, 1.0),
                bbox=(x0, y0, x0 + w0, y0 + h0),
                rle=tuple(encode_rle(bitmap)),
                width=cam.width,
                height=cam.height,
            )]
        new_frames.append(FrameRecord(
            frame_id=frame.frame_id,
            timestamp_ns=frame.timestamp_ns,
            ego_pose=frame.ego_pose,
            lidar_path=frame.lidar_path,
            cameras=tuple(CameraView(cam, tuple(masks), path)
                          for cam, masks, path in views),
            external_boxes=frame.external_boxes,
        ))
    return SceneBundle(
        scene_id=bundle.scene_id,
        classes=bundle.classes,
        shape_priors=bundle.shape_priors,
        lane_graph=bundle.lane_graph,
        frames=tuple(new_frames),
        root=bundle.root,
        manifest_path=bundle.manifest_path,
    )
