"""Layered configuration: JSON file, then environment, then CLI overrides.

A config file holds up to four sections: pipeline, fusion, eval, synth.
Environment variables override file values with the naming scheme
MASKLIFT_<SECTION>__<KEY>[__<SUBKEY>] (double underscore separates path
components, which are lowercased). --set overrides both, written as
dotted paths: section.key[= or .subkey=]value. Values parse as JSON where
possible and fall back to plain strings. Unknown sections and keys are
errors, not silent no-ops.
"""
import json
import os

from .fusion import FusionConfig
from .metrics import EvalConfig
from .pseudolabel import PipelineConfig
from .synth import SynthCamera, SynthConfig, SynthObject

SECTIONS = ("pipeline", "fusion", "eval", "synth")
_ENV_PREFIX = "MASKLIFT_"


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(tree, path, value):
    node = tree
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValueError(f"config path {'.'.join(path)} descends into "
                             f"a non-mapping value")
    node[path[-1]] = value


def load_layered_config(path=None, environ=None, overrides=()):
    """Merged {section: {key: value}} dict from the three layers."""
    tree = {}
    if path is not None:
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValueError(f"config file {path}: invalid JSON ({exc})")
        if not isinstance(doc, dict):
            raise ValueError(f"config file {path}: top level must be a "
                             "JSON object")
        for section, body in doc.items():
            if section not in SECTIONS:
                raise ValueError(f"config file {path}: unknown section "
                                 f"{section!r}")
            if not isinstance(body, dict):
                raise ValueError(f"config file {path}: section {section!r} "
                                 "must be a JSON object")
            tree[section] = dict(body)

    if environ is None:
        environ = os.environ
    for name in sorted(environ):
        if not name.startswith(_ENV_PREFIX):
            continue
        parts = name[len(_ENV_PREFIX):].lower().split("__")
        if parts[0] not in SECTIONS or len(parts) < 2:
            raise ValueError(f"environment variable {name}: expected "
                             f"{_ENV_PREFIX}<SECTION>__<KEY>")
        _set_path(tree, parts, _parse_value(environ[name]))

    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected path=value")
        dotted, _, raw = item.partition("=")
        parts = dotted.split(".")
        if len(parts) < 2 or parts[0] not in SECTIONS:
            raise ValueError(f"override {item!r}: path must start with one "
                             f"of {SECTIONS}")
        _set_path(tree, parts, _parse_value(raw))
    return tree


def _check_keys(body, allowed, where):
    unknown = sorted(set(body) - set(allowed))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")


def build_pipeline_config(body):
    body = dict(body or {})
    _check_keys(body, ("score_min", "nms2d_iou", "erosion_kernel",
                       "accumulation_frames", "medoid_compensation",
                       "nonvehicle_default_yaw", "vehicle_classes",
                       "nms3d_thresholds"), "pipeline config")
    kwargs = {}
    for key in ("score_min", "nms2d_iou", "nonvehicle_default_yaw"):
        if key in body:
            kwargs[key] = float(body[key])
    for key in ("erosion_kernel", "accumulation_frames"):
        if key in body:
            kwargs[key] = int(body[key])
    if "medoid_compensation" in body:
        kwargs["medoid_compensation"] = bool(body["medoid_compensation"])
    if "vehicle_classes" in body:
        kwargs["vehicle_classes"] = frozenset(body["vehicle_classes"])
    if "nms3d_thresholds" in body:
        # partial maps override per class, the rest keep their defaults
        merged = dict(PipelineConfig().nms3d_thresholds)
        merged.update({str(k): float(v)
                       for k, v in body["nms3d_thresholds"].items()})
        kwargs["nms3d_thresholds"] = merged
    return PipelineConfig(**kwargs)


def build_fusion_config(body):
    body = dict(body or {})
    _check_keys(body, ("tau", "iou_min"), "fusion config")
    kwargs = {k: float(v) for k, v in body.items()}
    return FusionConfig(**kwargs)


def build_eval_config(body):
    body = dict(body or {})
    _check_keys(body, ("dist_thresholds", "tp_threshold", "ap_mode",
                       "class_agnostic", "min_recall", "min_precision",
                       "yaw_periods"), "eval config")
    kwargs = {}
    if "dist_thresholds" in body:
        kwargs["dist_thresholds"] = tuple(float(v)
                                          for v in body["dist_thresholds"])
    for key in ("tp_threshold", "min_recall", "min_precision"):
        if key in body:
            kwargs[key] = float(body[key])
    if "ap_mode" in body:
        kwargs["ap_mode"] = str(body["ap_mode"])
    if "class_agnostic" in body:
        kwargs["class_agnostic"] = bool(body["class_agnostic"])
    if "yaw_periods" in body:
        merged = dict(EvalConfig().yaw_periods)
        merged.update({str(k): float(v)
                       for k, v in body["yaw_periods"].items()})
        kwargs["yaw_periods"] = merged
    return EvalConfig(**kwargs)


def build_synth_config(body):
    body = dict(body or {})
    _check_keys(body, ("seed", "scene_id", "n_frames", "frame_interval_ns",
                       "ego_start", "ego_yaw", "ego_speed", "objects",
                       "cameras", "classes", "shape_priors",
                       "points_per_object", "noise_sigma", "range_max",
                       "lanes", "mask_score"), "synth config")
    kwargs = {}
    for key in ("seed", "n_frames", "frame_interval_ns",
                "points_per_object"):
        if key in body:
            kwargs[key] = int(body[key])
    for key in ("ego_yaw", "ego_speed", "noise_sigma", "range_max"):
        if key in body:
            kwargs[key] = float(body[key])
    if "scene_id" in body:
        kwargs["scene_id"] = str(body["scene_id"])
    if "ego_start" in body:
        kwargs["ego_start"] = tuple(float(v) for v in body["ego_start"])
    if "mask_score" in body and body["mask_score"] is not None:
        kwargs["mask_score"] = float(body["mask_score"])
    if "classes" in body:
        kwargs["classes"] = tuple(str(c) for c in body["classes"])
    if "shape_priors" in body:
        kwargs["shape_priors"] = {str(k): tuple(float(x) for x in v)
                                  for k, v in body["shape_priors"].items()}
    if "objects" in body:
        objects = []
        for i, o in enumerate(body["objects"]):
            _check_keys(o, ("track_id", "class_label", "start", "yaw",
                            "speed", "dims"), f"synth config objects[{i}]")
            objects.append(SynthObject(
                track_id=str(o["track_id"]),
                class_label=str(o["class_label"]),
                start=tuple(float(v) for v in o["start"]),
                yaw=float(o.get("yaw", 0.0)),
                speed=float(o.get("speed", 0.0)),
                dims=None if o.get("dims") is None
                else tuple(float(v) for v in o["dims"]),
            ))
        kwargs["objects"] = tuple(objects)
    if "cameras" in body:
        cameras = []
        for i, c in enumerate(body["cameras"]):
            _check_keys(c, ("camera_id", "mount_yaw_deg", "fx", "fy", "cx",
                            "cy", "width", "height", "mount_z"),
                        f"synth config cameras[{i}]")
            fields = {k: c[k] for k in c}
            fields["camera_id"] = str(fields["camera_id"])
            cameras.append(SynthCamera(**fields))
        kwargs["cameras"] = tuple(cameras)
    if "lanes" in body and body["lanes"] != "auto":
        kwargs["lanes"] = tuple(
            (str(lane["lane_id"]),
             [[float(x), float(y)] for x, y in lane["centerline"]])
            for lane in body["lanes"])
    return SynthConfig(**kwargs)
