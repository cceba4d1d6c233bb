"""Lift 2D instance masks plus accumulated LiDAR into 3D cuboids.

Per frame: masks are score-filtered, deduplicated with greedy 2D NMS, and
eroded to shed boundary bleed; LiDAR from the trailing window is motion
compensated into the frame and grouped per mask by pinhole projection; each
group's medoid seeds a cuboid whose planar center is pushed from the visible
surface toward the object interior, with extents from per-class shape priors
and heading from the nearest lane centerline for vehicle classes. Class-wise
3D NMS removes cross-camera duplicates.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from . import defaults, kernels
from .geometry import normalize_yaw, project_to_image
from .scene_io import BundleError, Cuboid, load_bundle
from .suppression import nms3d


@dataclass(frozen=True)
class PipelineConfig:
    score_min: float = 0.10
    nms2d_iou: float = 0.75
    erosion_kernel: int = 3
    accumulation_frames: int = 3
    medoid_compensation: bool = True
    nonvehicle_default_yaw: float = 0.0  # world-frame heading for lane-less instances
    vehicle_classes: frozenset = frozenset(defaults.VEHICLE_CLASSES)
    nms3d_thresholds: dict = field(
        default_factory=lambda: dict(defaults.NMS3D_THRESHOLDS))

    def __post_init__(self):
        if not 0.0 <= self.score_min <= 1.0:
            raise ValueError(f"score_min {self.score_min} outside [0, 1]")
        if not 0.0 <= self.nms2d_iou <= 1.0:
            raise ValueError(f"nms2d_iou {self.nms2d_iou} outside [0, 1]")
        if self.erosion_kernel < 1 or self.erosion_kernel % 2 == 0:
            raise ValueError(f"erosion_kernel must be an odd positive "
                             f"integer, got {self.erosion_kernel}")
        if self.accumulation_frames < 1:
            raise ValueError(f"accumulation_frames must be >= 1, got "
                             f"{self.accumulation_frames}")
        if not math.isfinite(self.nonvehicle_default_yaw):
            raise ValueError("nonvehicle_default_yaw must be finite")
        for cls, radius in self.nms3d_thresholds.items():
            if radius <= 0.0:
                raise ValueError(f"nms3d threshold for {cls} must be "
                                 f"positive, got {radius}")

    def validate_for_bundle(self, bundle):
        """Every class the bundle can emit needs a prior and an NMS radius."""
        for cls in bundle.classes:
            bundle.shape_priors.dims_for(cls)
            if cls not in self.nms3d_thresholds:
                raise BundleError(f"no 3D NMS threshold configured for "
                                  f"class {cls!r}")

    def as_dict(self):
        return {
            "score_min": self.score_min,
            "nms2d_iou": self.nms2d_iou,
            "erosion_kernel": self.erosion_kernel,
            "accumulation_frames": self.accumulation_frames,
            "medoid_compensation": self.medoid_compensation,
            "nonvehicle_default_yaw": self.nonvehicle_default_yaw,
            "vehicle_classes": sorted(self.vehicle_classes),
            "nms3d_thresholds": dict(sorted(self.nms3d_thresholds.items())),
        }


@dataclass(frozen=True, eq=False)
class MaskedPointSet:
    """LiDAR points attributed to one 2D instance."""
    mask: object  # InstanceMask2D
    points: np.ndarray  # (n, 3) in the target ego frame
    class_label: str
    score: float

    @classmethod
    def from_mask(cls, mask, points):
        return cls(mask, points, mask.class_label, mask.score)


def _bbox_iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def filter_masks(masks, cfg):
    """Score gate, then greedy bbox NMS across all classes of one camera.

    Synonym prompting yields near-identical instances under different
    labels, so suppression deliberately ignores class: IoU above nms2d_iou
    with an already-kept mask removes the newcomer. Order of consideration
    is score descending, input order on ties.
    """
    scored = [m for m in masks if m.score >= cfg.score_min]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].score, i))
    kept = []
    for i in order:
        if all(_bbox_iou(scored[i].bbox, k.bbox) <= cfg.nms2d_iou
               for k in kept):
            kept.append(scored[i])
    return kept


def erode_mask(bitmap, kernel):
    """Binary erosion with a kernel x kernel all-ones window, zero padded,
    so set pixels touching the image border always erode away."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be an odd positive integer, "
                         f"got {kernel}")
    bitmap = np.asarray(bitmap, dtype=bool)
    if kernel == 1:
        return bitmap.copy()
    pad = kernel // 2
    h, w = bitmap.shape
    padded = np.pad(bitmap.astype(np.int64), pad)
    integral = np.pad(np.cumsum(np.cumsum(padded, axis=0), axis=1),
                      ((1, 0), (1, 0)))
    window = (integral[kernel:kernel + h, kernel:kernel + w]
              - integral[:h, kernel:kernel + w]
              - integral[kernel:kernel + h, :w]
              + integral[:h, :w])
    return window == kernel * kernel


def accumulate_sweeps(sweeps, poses, n):
    """Concatenate the last n sweeps in the ego frame of the newest one.

    sweeps and poses run oldest to newest; the final entry is the target
    frame. Points come in as (k, 3) arrays in their own frame's ego
    coordinates and go out as one (m, 3) array in the target ego frame,
    ordered chronologically. n = 1 returns the target sweep alone.
    """
    if len(sweeps) != len(poses) or not sweeps:
        raise ValueError("sweeps and poses must be equal-length and "
                         "non-empty")
    if n < 1:
        raise ValueError(f"window size must be >= 1, got {n}")
    sweeps = sweeps[-n:]
    poses = poses[-n:]
    target_inv = poses[-1].invert()
    out = []
    for pts, pose in zip(sweeps[:-1], poses[:-1]):
        pts = np.asarray(pts, dtype=np.float64)
        if pts.size == 0:
            continue
        out.append(target_inv.compose(pose).apply(pts))
    last = np.asarray(sweeps[-1], dtype=np.float64)
    if last.size:
        out.append(last)
    if not out:
        return np.zeros((0, 3))
    return np.concatenate(out, axis=0)


def group_points(points_ego, cam, bitmap):
    """Points whose pinhole projection lands on a set pixel of bitmap.

    A point maps to the pixel (floor(u), floor(v)); only points in front of
    the camera and inside the image participate. Returns the selected rows
    of points_ego; empty input or no hits give an empty (0, 3) array.
    """
    pts = np.asarray(points_ego, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros((0, 3))
    cam_pts = cam.extrinsic.invert().apply(pts)
    uvd, valid = project_to_image(cam_pts, cam)
    if not valid.any():
        return np.zeros((0, 3))
    u = uvd[valid, 0].astype(np.int64)
    v = uvd[valid, 1].astype(np.int64)
    hits = bitmap[v, u]
    return pts[valid][hits]


def estimate_center(points):
    """The group's medoid: the member point minimizing summed Euclidean
    distance to the rest. Lies on the sensed (visible) surface."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot estimate a center from zero points")
    return pts[kernels.medoid_index(pts)]


def compensate_center(medoid_xy, dims, yaw, ego_xy):
    """Push a surface medoid to the box interior along the ego sight line.

    The medoid of a one-sided LiDAR return cloud sits on the visible
    surface, biased toward the sensor. The correction moves it away from
    the ego by the distance from the box center to its boundary along the
    sight-line direction, given the box footprint (width, length) and yaw.
    Raises when the medoid coincides with the ego position, where the
    direction is undefined.
    """
    cx, cy = float(medoid_xy[0]), float(medoid_xy[1])
    ex, ey = float(ego_xy[0]), float(ego_xy[1])
    dx, dy = ex - cx, ey - cy
    if dx == 0.0 and dy == 0.0:
        raise ValueError("medoid coincides with the ego position; "
                         "sight-line direction undefined")
    alpha = math.atan2(dy, dx)
    rel = alpha - yaw
    s, c = math.sin(rel), math.cos(rel)
    width, length = float(dims[0]), float(dims[1])
    along_width = abs(width / (2.0 * s)) if s != 0.0 else math.inf
    along_length = abs(length / (2.0 * c)) if c != 0.0 else math.inf
    depth = min(along_width, along_length)
    return (cx - depth * math.cos(alpha), cy - depth * math.sin(alpha))


def assign_orientation(xy, class_label, lane_graph, cfg):
    """Heading for a new cuboid: nearest lane segment direction for vehicle
    classes, the configured default otherwise (also the fallback when the
    lane graph is empty)."""
    if class_label in cfg.vehicle_classes:
        heading = lane_graph.nearest_heading(xy)
        if heading is not None:
            return heading
    return normalize_yaw(cfg.nonvehicle_default_yaw)


def lift_instance(mset, bundle, frame, cfg):
    """Build one world-frame cuboid from a masked point group, or None when
    the group is empty."""
    if len(mset.points) == 0:
        return None
    medoid_ego = estimate_center(mset.points)
    medoid_w = frame.ego_pose.apply(medoid_ego[None, :])[0]
    ego_xy = frame.ego_pose.translation[:2]
    dims = bundle.shape_priors.dims_for(mset.class_label)
    yaw = assign_orientation((medoid_w[0], medoid_w[1]), mset.class_label,
                             bundle.lane_graph, cfg)
    if cfg.medoid_compensation:
        x, y = compensate_center((medoid_w[0], medoid_w[1]), dims, yaw,
                                 ego_xy)
    else:
        x, y = float(medoid_w[0]), float(medoid_w[1])
    return Cuboid(
        frame_id=frame.frame_id,
        class_label=mset.class_label,
        score=mset.score,
        center=(x, y, float(medoid_w[2])),
        dims=dims,
        yaw=yaw,
        velocity=None,
        source="cm3d",
    )


def generate_frame(bundle, frame_index, cfg):
    """All pseudo-label cuboids for one frame, in world coordinates,
    after class-wise 3D NMS."""
    if not 0 <= frame_index < len(bundle.frames):
        raise ValueError(f"frame_index {frame_index} out of range for "
                         f"{len(bundle.frames)} frames")
    lo = max(0, frame_index - cfg.accumulation_frames + 1)
    window = bundle.frames[lo:frame_index + 1]
    sweeps = [f.points()[:, :3] for f in window]
    poses = [f.ego_pose for f in window]
    points_ego = accumulate_sweeps(sweeps, poses, cfg.accumulation_frames)

    frame = bundle.frames[frame_index]
    cuboids = []
    for view in frame.cameras:
        for mask in filter_masks(view.masks, cfg):
            eroded = erode_mask(mask.bitmap, cfg.erosion_kernel)
            pts = group_points(points_ego, view.camera, eroded)
            if len(pts) == 0:
                continue
            cuboid = lift_instance(MaskedPointSet.from_mask(mask, pts),
                                   bundle, frame, cfg)
            if cuboid is not None:
                cuboids.append(cuboid)
    ego_xy = frame.ego_pose.translation[:2]
    return nms3d(cuboids, cfg.nms3d_thresholds, ego_xy=ego_xy)


# per-process bundle cache so parallel workers parse the scene once
_worker_bundle = None


def _generate_frame_by_path(manifest_path, frame_index, cfg):
    global _worker_bundle
    if (_worker_bundle is None
            or _worker_bundle.manifest_path != manifest_path):
        _worker_bundle = load_bundle(manifest_path)
    return generate_frame(_worker_bundle, frame_index, cfg)


def generate_scene(bundle, cfg, jobs=1, frame_indices=None):
    """Run generate_frame over the scene (or a subset of frame indices).

    jobs > 1 farms frames out to worker processes; results are collected in
    frame order either way, so the output is identical for any job count.
    """
    cfg.validate_for_bundle(bundle)
    if frame_indices is None:
        frame_indices = range(len(bundle.frames))
    frame_indices = list(frame_indices)
    if jobs <= 1 or len(frame_indices) <= 1:
        per_frame = [generate_frame(bundle, i, cfg) for i in frame_indices]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_frame = list(pool.map(
                _generate_frame_by_path,
                [bundle.manifest_path] * len(frame_indices),
                frame_indices,
                [cfg] * len(frame_indices),
            ))
    out = []
    for frame_cuboids in per_frame:
        out.extend(frame_cuboids)
    return out
