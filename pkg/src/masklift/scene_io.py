"""Scene-bundle, mask, cuboid, and point-cloud serialization.

A scene bundle is a directory with a scene.json manifest referencing, per
frame: a little-endian float32 x/y/z/intensity point cloud (.bin), one
instance-mask JSON file per camera, and optionally a cuboid file of external
detections. Masks use uncompressed column-major run-length encoding,
alternating background/foreground and starting with background. Loaders
validate and reject; they never repair.
"""
from dataclasses import dataclass
from functools import cached_property
import json
import math
import os

import numpy as np

from .geometry import CameraModel, SE3Pose, normalize_yaw

SCHEMA_VERSION = 1
CUBOID_SOURCES = ("cm3d", "external", "fused", "ground_truth")


class BundleError(ValueError):
    """A file or field failed validation. The message names the culprit."""


def _require(cond, message):
    if not cond:
        raise BundleError(message)


def encode_rle(bitmap):
    """Column-major run lengths of a boolean (height, width) bitmap.

    Counts alternate background/foreground and always start with the
    background run, so a bitmap whose first pixel is set encodes as [0, ...].
    """
    flat = np.asarray(bitmap, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode_rle(counts, width, height, where="rle"):
    """Inverse of encode_rle; returns a boolean (height, width) bitmap."""
    counts = list(counts)
    _require(all(isinstance(c, int) and c >= 0 for c in counts),
             f"{where}: counts must be non-negative integers")
    total = sum(counts)
    _require(total == width * height,
             f"{where}: counts sum to {total}, expected "
             f"width*height = {width * height}")
    values = np.arange(len(counts), dtype=np.int64) % 2
    flat = np.repeat(values, counts).astype(bool)
    return flat.reshape((height, width), order="F")


@dataclass(frozen=True)
class InstanceMask2D:
    """One 2D instance: RLE payload plus its half-open pixel bbox
    [x_min, x_max) x [y_min, y_max)."""
    instance_id: str
    class_label: str
    score: float
    bbox: tuple  # (x_min, y_min, x_max, y_max), ints
    rle: tuple
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        object.__setattr__(self, "rle", tuple(int(v) for v in self.rle))
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise BundleError(f"mask {self.instance_id}: score {self.score} "
                              "outside [0, 1]")
        x0, y0, x1, y1 = self.bbox
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise BundleError(f"mask {self.instance_id}: bbox {self.bbox} "
                              f"invalid for a {self.width}x{self.height} image")

    @cached_property
    def bitmap(self):
        bm = decode_rle(list(self.rle), self.width, self.height,
                        where=f"mask {self.instance_id}")
        if not bm.any():
            raise BundleError(f"mask {self.instance_id}: empty mask")
        rows, cols = np.nonzero(bm)
        x0, y0, x1, y1 = self.bbox
        if (cols.min() < x0 or cols.max() >= x1
                or rows.min() < y0 or rows.max() >= y1):
            raise BundleError(f"mask {self.instance_id}: set pixels outside "
                              f"bbox {self.bbox}")
        return bm

    @property
    def area(self):
        return int(self.bitmap.sum())


@dataclass(frozen=True, eq=False)
class LaneGraph:
    """Lane centerlines as 2D polylines, used only for nearest-segment
    heading lookup."""
    lanes: tuple  # of (lane_id, (n, 2) float ndarray)

    def __post_init__(self):
        for lane_id, line in self.lanes:
            if line.ndim != 2 or line.shape[1] != 2 or line.shape[0] < 2:
                raise BundleError(f"lane {lane_id}: centerline must be an "
                                  "(n>=2, 2) array")
            if not np.isfinite(line).all():
                raise BundleError(f"lane {lane_id}: non-finite vertex")

    def nearest_heading(self, xy):
        """Yaw of the lane segment closest to the query point, or None when
        the graph has no lanes. Ties go to the earliest lane and segment."""
        best = None
        px, py = float(xy[0]), float(xy[1])
        for lane_id, line in self.lanes:
            a = line[:-1]
            b = line[1:]
            d = b - a
            seg_len2 = (d * d).sum(axis=1)
            # degenerate zero-length segments project onto their start point
            t = np.zeros(len(a))
            nz = seg_len2 > 0.0
            t[nz] = ((px - a[nz, 0]) * d[nz, 0]
                     + (py - a[nz, 1]) * d[nz, 1]) / seg_len2[nz]
            t = np.clip(t, 0.0, 1.0)
            proj = a + t[:, None] * d
            dist2 = (proj[:, 0] - px) ** 2 + (proj[:, 1] - py) ** 2
            i = int(np.argmin(dist2))
            if best is None or dist2[i] < best[0]:
                best = (float(dist2[i]), float(d[i, 0]), float(d[i, 1]))
        if best is None:
            return None
        return normalize_yaw(math.atan2(best[2], best[1]))


@dataclass(frozen=True)
class ShapePriorTable:
    """Per-class default (width, length, height) in meters."""
    dims_by_class: tuple  # of (class_label, (w, l, h))

    def __post_init__(self):
        seen = {}
        for label, dims in self.dims_by_class:
            if label in seen:
                raise BundleError(f"shape prior for {label} listed twice")
            dims = tuple(float(v) for v in dims)
            if len(dims) != 3 or any(not math.isfinite(v) or v <= 0.0
                                     for v in dims):
                raise BundleError(f"shape prior for {label}: dims {dims} "
                                  "must be three positive numbers")
            seen[label] = dims
        object.__setattr__(self, "dims_by_class",
                           tuple((k, seen[k]) for k, _ in self.dims_by_class))

    @cached_property
    def _map(self):
        return dict(self.dims_by_class)

    def dims_for(self, class_label):
        try:
            return self._map[class_label]
        except KeyError:
            raise BundleError(f"no shape prior for class {class_label!r}")

    def classes(self):
        return tuple(k for k, _ in self.dims_by_class)


@dataclass(frozen=True)
class Cuboid:
    """Oriented upright box: center (x, y, z), dims (width, length, height),
    yaw about +z in (-pi, pi]. score is a probability in [0, 1] except for
    source="external", where it carries the producer's raw logit until
    calibration."""
    frame_id: str
    class_label: str
    score: float
    center: tuple
    dims: tuple
    yaw: float
    velocity: tuple = None  # (vx, vy) or None
    source: str = "cm3d"

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "center",
                           tuple(float(v) for v in self.center))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "yaw", float(self.yaw))
        if self.velocity is not None:
            object.__setattr__(self, "velocity",
                               tuple(float(v) for v in self.velocity))
        name = f"cuboid {self.frame_id}/{self.class_label}"
        if self.source not in CUBOID_SOURCES:
            raise BundleError(f"{name}: unknown source {self.source!r}")
        if len(self.center) != 3 or not all(map(math.isfinite, self.center)):
            raise BundleError(f"{name}: center must be 3 finite numbers")
        if len(self.dims) != 3 or any(not math.isfinite(v) or v <= 0.0
                                      for v in self.dims):
            raise BundleError(f"{name}: dims must be 3 positive numbers")
        if not math.isfinite(self.yaw) or not (-math.pi < self.yaw
                                               <= math.pi):
            raise BundleError(f"{name}: yaw {self.yaw} outside (-pi, pi]")
        if not math.isfinite(self.score):
            raise BundleError(f"{name}: non-finite score")
        if self.source != "external" and not 0.0 <= self.score <= 1.0:
            raise BundleError(f"{name}: score {self.score} outside [0, 1]")
        if self.velocity is not None and (
                len(self.velocity) != 2
                or not all(map(math.isfinite, self.velocity))):
            raise BundleError(f"{name}: velocity must be 2 finite numbers")


@dataclass(frozen=True, eq=False)
class CameraView:
    camera: CameraModel
    masks: tuple  # of InstanceMask2D
    masks_path: str


@dataclass(frozen=True, eq=False)
class FrameRecord:
    frame_id: str
    timestamp_ns: int
    ego_pose: SE3Pose
    lidar_path: str
    cameras: tuple  # of CameraView
    external_boxes: tuple = None  # of Cuboid, or None

    def points(self):
        return read_point_cloud(self.lidar_path)


@dataclass(frozen=True, eq=False)
class SceneBundle:
    scene_id: str
    classes: tuple
    shape_priors: ShapePriorTable
    lane_graph: LaneGraph
    frames: tuple  # of FrameRecord
    root: str
    manifest_path: str


def write_point_cloud(points, path):
    """Write an (n, 4) x/y/z/intensity array as little-endian float32."""
    pts = np.asarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise BundleError(f"point cloud must be (n, 4), got {pts.shape}")
    with open(path, "wb") as f:
        f.write(pts.tobytes())


def read_point_cloud(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % 16 != 0:
        raise BundleError(f"{path}: size {len(raw)} is not a multiple of "
                          "16 bytes (4 float32 per point)")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.isfinite(pts).all():
        raise BundleError(f"{path}: non-finite values in point cloud")
    return pts.astype(np.float64)


def _load_json(path, what):
    if not os.path.exists(path):
        raise BundleError(f"{what}: file {path} does not exist")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise BundleError(f"{what}: {path} is not valid JSON ({exc})")


def _check_version(doc, what):
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise BundleError(f"{what}: schema_version {version!r}, expected "
                          f"{SCHEMA_VERSION}")


def _pose_from_json(doc, where):
    try:
        return SE3Pose(tuple(doc["rotation"]), tuple(doc["translation"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{where}: bad pose ({exc})")


def _pose_to_json(pose):
    return {"rotation": list(pose.rotation),
            "translation": list(pose.translation)}


def _camera_from_json(doc, where):
    try:
        return CameraModel(
            camera_id=str(doc["camera_id"]),
            fx=float(doc["fx"]), fy=float(doc["fy"]),
            cx=float(doc["cx"]), cy=float(doc["cy"]),
            width=int(doc["width"]), height=int(doc["height"]),
            extrinsic=_pose_from_json(doc["extrinsic"], f"{where}.extrinsic"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleError(f"{where}: bad camera ({exc})")


def _load_masks_file(path, frame_id, camera, classes):
    doc = _load_json(path, f"masks for {frame_id}/{camera.camera_id}")
    _check_version(doc, path)
    _require(doc.get("frame_id") == frame_id,
             f"{path}: frame_id {doc.get('frame_id')!r} != {frame_id!r}")
    _require(doc.get("camera_id") == camera.camera_id,
             f"{path}: camera_id mismatch")
    _require(doc.get("width") == camera.width
             and doc.get("height") == camera.height,
             f"{path}: image size mismatch with camera "
             f"{camera.camera_id}")
    masks = []
    for i, m in enumerate(doc.get("masks", [])):
        where = f"{path}: masks[{i}]"
        try:
            mask = InstanceMask2D(
                instance_id=str(m["instance_id"]),
                class_label=str(m["class_label"]),
                score=m["score"],
                bbox=tuple(m["bbox"]),
                rle=tuple(m["rle"]),
                width=camera.width,
                height=camera.height,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, BundleError):
                raise BundleError(f"{where}: {exc}")
            raise BundleError(f"{where}: malformed mask ({exc})")
        _require(mask.class_label in classes,
                 f"{where}: class {mask.class_label!r} not in the bundle's "
                 "class list")
        mask.bitmap  # decode now so bad RLE fails at load, not mid-pipeline
        masks.append(mask)
    return tuple(masks)


def _load_lanes_file(path):
    doc = _load_json(path, "lanes")
    _check_version(doc, path)
    lanes = []
    for i, lane in enumerate(doc.get("lanes", [])):
        try:
            lane_id = str(lane["lane_id"])
            line = np.asarray(lane["centerline"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"{path}: lanes[{i}] malformed ({exc})")
        lanes.append((lane_id, line))
    return LaneGraph(tuple(lanes))


def load_bundle(manifest_path):
    """Parse and fully validate a scene bundle. Every referenced file is
    opened and checked here; failures raise BundleError naming the field."""
    doc = _load_json(manifest_path, "manifest")
    _check_version(doc, "manifest")
    root = os.path.dirname(os.path.abspath(manifest_path))

    scene_id = doc.get("scene_id")
    _require(isinstance(scene_id, str) and scene_id,
             "manifest: scene_id must be a non-empty string")
    classes = doc.get("classes")
    _require(isinstance(classes, list) and classes
             and all(isinstance(c, str) for c in classes),
             "manifest: classes must be a non-empty list of strings")
    _require(len(set(classes)) == len(classes),
             "manifest: duplicate entries in classes")
    classes = tuple(classes)

    priors_doc = doc.get("shape_priors")
    _require(isinstance(priors_doc, dict),
             "manifest: shape_priors must be a mapping")
    priors = ShapePriorTable(tuple(sorted(
        (str(k), tuple(v)) for k, v in priors_doc.items())))
    missing = [c for c in classes if c not in priors_doc]
    _require(not missing,
             f"manifest: shape_priors missing classes {missing}")

    lanes_ref = doc.get("lanes")
    if lanes_ref is None:
        lane_graph = LaneGraph(())
    else:
        lane_graph = _load_lanes_file(os.path.join(root, lanes_ref))

    frames_doc = doc.get("frames")
    _require(isinstance(frames_doc, list) and frames_doc,
             "manifest: frames must be a non-empty list")
    frames = []
    last_ts = None
    seen_ids = set()
    for i, fr in enumerate(frames_doc):
        where = f"manifest: frames[{i}]"
        frame_id = fr.get("frame_id")
        _require(isinstance(frame_id, str) and frame_id,
                 f"{where}.frame_id must be a non-empty string")
        _require(frame_id not in seen_ids,
                 f"{where}.frame_id {frame_id!r} is duplicated")
        seen_ids.add(frame_id)
        ts = fr.get("timestamp_ns")
        _require(isinstance(ts, int),
                 f"{where}.timestamp_ns must be an integer")
        _require(last_ts is None or ts > last_ts,
                 f"{where}.timestamp_ns {ts} does not increase")
        last_ts = ts
        ego = _pose_from_json(fr.get("ego_pose", {}), f"{where}.ego_pose")

        lidar_ref = fr.get("lidar")
        _require(isinstance(lidar_ref, str),
                 f"{where}.lidar must be a path")
        lidar_path = os.path.join(root, lidar_ref)
        _require(os.path.exists(lidar_path),
                 f"{where}.lidar: file {lidar_path} does not exist")
        _require(os.path.getsize(lidar_path) % 16 == 0,
                 f"{where}.lidar: {lidar_path} size is not a multiple of "
                 "16 bytes")

        cameras = []
        for j, cam_doc in enumerate(fr.get("cameras", [])):
            cam_where = f"{where}.cameras[{j}]"
            camera = _camera_from_json(cam_doc, cam_where)
            masks_ref = cam_doc.get("masks")
            _require(isinstance(masks_ref, str),
                     f"{cam_where}.masks must be a path")
            masks_path = os.path.join(root, masks_ref)
            masks = _load_masks_file(masks_path, frame_id, camera, classes)
            cameras.append(CameraView(camera, masks, masks_path))

        external = None
        if fr.get("external_boxes") is not None:
            ext_path = os.path.join(root, fr["external_boxes"])
            boxes = read_cuboids(ext_path)
            for b in boxes:
                _require(b.source == "external",
                         f"{where}.external_boxes: source {b.source!r} "
                         "is not 'external'")
                _require(b.frame_id == frame_id,
                         f"{where}.external_boxes: cuboid frame_id "
                         f"{b.frame_id!r} != {frame_id!r}")
            external = tuple(boxes)

        frames.append(FrameRecord(frame_id, ts, ego, lidar_path,
                                  tuple(cameras), external))

    return SceneBundle(scene_id, classes, priors, lane_graph,
                       tuple(frames), root,
                       os.path.abspath(manifest_path))


def _mask_to_json(mask):
    return {
        "instance_id": mask.instance_id,
        "class_label": mask.class_label,
        "score": mask.score,
        "bbox": list(mask.bbox),
        "rle": list(mask.rle),
    }


def write_bundle(out_dir, scene_id, classes, shape_priors, lanes, frames):
    """Write a scene bundle directory and return the manifest path.

    frames: sequence of dicts with keys frame_id, timestamp_ns, ego_pose
    (SE3Pose), points ((n, 4) array), cameras (list of dicts with keys
    camera (CameraModel) and masks (list of InstanceMask2D)), and optionally
    external_boxes (list of Cuboid).
    """
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "lidar"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

    lanes_doc = {
        "schema_version": SCHEMA_VERSION,
        "lanes": [{"lane_id": lane_id,
                   "centerline": [[float(x), float(y)] for x, y in line]}
                  for lane_id, line in lanes],
    }
    with open(os.path.join(out_dir, "lanes.json"), "w") as f:
        json.dump(lanes_doc, f)

    manifest_frames = []
    needs_external_dir = any(fr.get("external_boxes") for fr in frames)
    if needs_external_dir:
        os.makedirs(os.path.join(out_dir, "external"), exist_ok=True)
    for fr in frames:
        frame_id = fr["frame_id"]
        lidar_ref = f"lidar/{frame_id}.bin"
        write_point_cloud(fr["points"], os.path.join(out_dir, lidar_ref))
        cam_docs = []
        for cam_entry in fr["cameras"]:
            cam = cam_entry["camera"]
            masks_ref = f"masks/{frame_id}_{cam.camera_id}.json"
            masks_doc = {
                "schema_version": SCHEMA_VERSION,
                "frame_id": frame_id,
                "camera_id": cam.camera_id,
                "width": cam.width,
                "height": cam.height,
                "masks": [_mask_to_json(m) for m in cam_entry["masks"]],
            }
            with open(os.path.join(out_dir, masks_ref), "w") as f:
                json.dump(masks_doc, f)
            cam_docs.append({
                "camera_id": cam.camera_id,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
                "extrinsic": _pose_to_json(cam.extrinsic),
                "masks": masks_ref,
            })
        frame_doc = {
            "frame_id": frame_id,
            "timestamp_ns": int(fr["timestamp_ns"]),
            "ego_pose": _pose_to_json(fr["ego_pose"]),
            "lidar": lidar_ref,
            "cameras": cam_docs,
        }
        if fr.get("external_boxes"):
            ext_ref = f"external/{frame_id}.json"
            write_cuboids(fr["external_boxes"],
                          os.path.join(out_dir, ext_ref))
            frame_doc["external_boxes"] = ext_ref
        manifest_frames.append(frame_doc)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene_id,
        "classes": list(classes),
        "shape_priors": {k: list(v) for k, v in shape_priors.items()},
        "lanes": "lanes.json",
        "frames": manifest_frames,
    }
    manifest_path = os.path.join(out_dir, "scene.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


def _cuboid_to_json(c):
    return {
        "frame_id": c.frame_id,
        "class_label": c.class_label,
        "score": c.score,
        "center": list(c.center),
        "dims": list(c.dims),
        "yaw": c.yaw,
        "velocity": None if c.velocity is None else list(c.velocity),
        "source": c.source,
    }


def write_cuboids(cuboids, path, config=None):
    doc = {"schema_version": SCHEMA_VERSION,
           "cuboids": [_cuboid_to_json(c) for c in cuboids]}
    if config is not None:
        doc["config"] = config
    with open(path, "w") as f:
        json.dump(doc, f)


def read_cuboids(path):
    doc = _load_json(path, "cuboids")
    _check_version(doc, path)
    cuboids = []
    for i, c in enumerate(doc.get("cuboids", [])):
        try:
            cuboids.append(Cuboid(
                frame_id=str(c["frame_id"]),
                class_label=str(c["class_label"]),
                score=c["score"],
                center=tuple(c["center"]),
                dims=tuple(c["dims"]),
                yaw=c["yaw"],
                velocity=None if c.get("velocity") is None
                else tuple(c["velocity"]),
                source=c.get("source", "cm3d"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, BundleError):
                raise BundleError(f"{path}: cuboids[{i}]: {exc}")
            raise BundleError(f"{path}: cuboids[{i}] malformed ({exc})")
    return cuboids
