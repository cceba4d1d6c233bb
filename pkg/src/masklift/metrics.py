"""Detection metrics: distance-thresholded AP, true-positive error means,
and the composite detection score.

Matching is greedy per class: predictions in descending score order claim
the nearest still-unmatched ground-truth box in their frame when the BEV
center distance falls under the threshold. AP is computed per distance
threshold and averaged; the "nuscenes_normalized" mode interpolates
precision at 101 recall points, discards the low-recall bins, subtracts a
precision floor, and renormalizes, while "raw_auc" integrates the raw
precision-recall staircase. True-positive errors (translation, scale,
orientation, velocity, attribute) are plain means over pairs matched at the
dedicated threshold; classes with no matches score the worst-case 1.0 and
are flagged. Attribute error is pinned at 1.0 because nothing in this
system predicts attributes.
"""
from dataclasses import dataclass, field, replace
import json
import math

import numpy as np

from . import defaults
from .scene_io import BundleError, SCHEMA_VERSION, _load_json

AP_MODES = ("nuscenes_normalized", "raw_auc")
TP_ERROR_KEYS = ("ate", "ase", "aoe", "ave", "aae")


@dataclass(frozen=True)
class EvalConfig:
    dist_thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    tp_threshold: float = 2.0
    ap_mode: str = "nuscenes_normalized"
    class_agnostic: bool = False
    min_recall: float = 0.1
    min_precision: float = 0.1
    yaw_periods: dict = field(
        default_factory=lambda: dict(defaults.YAW_PERIODS))

    def __post_init__(self):
        object.__setattr__(self, "dist_thresholds",
                           tuple(float(t) for t in self.dist_thresholds))
        if not self.dist_thresholds or any(t <= 0.0
                                           for t in self.dist_thresholds):
            raise ValueError("dist_thresholds must be positive")
        if self.tp_threshold <= 0.0:
            raise ValueError("tp_threshold must be positive")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}, got "
                             f"{self.ap_mode!r}")
        if not 0.0 <= self.min_recall < 1.0:
            raise ValueError("min_recall must be in [0, 1)")
        if not 0.0 <= self.min_precision < 1.0:
            raise ValueError("min_precision must be in [0, 1)")

    def yaw_period_for(self, class_label):
        return float(self.yaw_periods.get(class_label, 2.0 * math.pi))

    def as_dict(self):
        return {
            "dist_thresholds": list(self.dist_thresholds),
            "tp_threshold": self.tp_threshold,
            "ap_mode": self.ap_mode,
            "class_agnostic": self.class_agnostic,
            "min_recall": self.min_recall,
            "min_precision": self.min_precision,
            "yaw_periods": dict(sorted(self.yaw_periods.items())),
        }


def match_by_center(preds, gts, threshold):
    """Greedy matching for one class across all frames.

    Predictions are visited score descending (input order on ties); each
    claims the nearest unmatched ground truth of its frame when the BEV
    center distance is strictly under the threshold. Returns (tp_flags,
    pairs): tp_flags is one bool per prediction in visiting order; pairs
    holds (pred, gt, distance) for the hits.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    gt_by_frame = {}
    for g in gts:
        gt_by_frame.setdefault(g.frame_id, []).append(g)
    taken = {fid: [False] * len(lst) for fid, lst in gt_by_frame.items()}
    tp_flags = []
    pairs = []
    for i in order:
        p = preds[i]
        candidates = gt_by_frame.get(p.frame_id, [])
        best_j, best_d = -1, math.inf
        for j, g in enumerate(candidates):
            if taken[p.frame_id][j]:
                continue
            d = math.hypot(p.center[0] - g.center[0],
                           p.center[1] - g.center[1])
            if d < best_d:
                best_d, best_j = d, j
        if best_j >= 0 and best_d < threshold:
            taken[p.frame_id][best_j] = True
            tp_flags.append(True)
            pairs.append((p, candidates[best_j], best_d))
        else:
            tp_flags.append(False)
    return tp_flags, pairs


def average_precision(tp_flags, npos, mode="nuscenes_normalized",
                      min_recall=0.1, min_precision=0.1):
    """AP from per-prediction hit flags (already in score order) and the
    ground-truth count. Zero ground truth or zero predictions give 0."""
    if mode not in AP_MODES:
        raise ValueError(f"ap_mode must be one of {AP_MODES}, got {mode!r}")
    if npos == 0 or len(tp_flags) == 0:
        return 0.0
    hits = np.asarray(tp_flags, dtype=bool)
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    precision = tp / (tp + fp)
    recall = tp / npos
    if mode == "raw_auc":
        prev = np.concatenate([[0.0], recall[:-1]])
        return float(np.sum((recall - prev) * precision))
    query = np.linspace(0.0, 1.0, 101)
    # beyond the last achieved recall precision reads as 0; at a recall
    # achieved several times the last (lowest) precision wins
    interpolated = np.interp(query, recall, precision, right=0.0)
    cut = int(round(100 * min_recall)) + 1
    clipped = np.clip(interpolated[cut:] - min_precision, 0.0, None)
    return float(np.mean(clipped) / (1.0 - min_precision))


def _aligned_dims_iou(dims_a, dims_b):
    inter = 1.0
    for da, db in zip(dims_a, dims_b):
        inter *= min(da, db)
    vol_a = dims_a[0] * dims_a[1] * dims_a[2]
    vol_b = dims_b[0] * dims_b[1] * dims_b[2]
    return inter / (vol_a + vol_b - inter)


def _yaw_error(yaw_a, yaw_b, period):
    d = math.fmod(abs(yaw_a - yaw_b), period)
    return min(d, period - d)


def tp_errors(pairs, yaw_period):
    """Mean true-positive errors over matched (pred, gt, distance) pairs.

    ate: BEV center distance. ase: 1 minus the yaw-aligned, center-aligned
    box IoU (a pure extent error). aoe: absolute yaw difference folded into
    the class period. ave: L2 velocity difference over pairs where both
    members carry one, worst-case 1.0 when none do. aae: pinned 1.0. An
    empty pair list returns 1.0 across the board. Second return value is a
    flag dict naming the degradations that fired.
    """
    flags = {}
    if not pairs:
        return dict.fromkeys(TP_ERROR_KEYS, 1.0), {"no_matches": True}
    ate = sum(d for _, _, d in pairs) / len(pairs)
    ase = sum(1.0 - _aligned_dims_iou(p.dims, g.dims)
              for p, g, _ in pairs) / len(pairs)
    aoe = sum(_yaw_error(p.yaw, g.yaw, yaw_period)
              for p, g, _ in pairs) / len(pairs)
    vel_pairs = [(p, g) for p, g, _ in pairs
                 if p.velocity is not None and g.velocity is not None]
    if vel_pairs:
        ave = sum(math.hypot(p.velocity[0] - g.velocity[0],
                             p.velocity[1] - g.velocity[1])
                  for p, g in vel_pairs) / len(vel_pairs)
    else:
        ave = 1.0
        flags["velocity_defaulted"] = True
    return {"ate": ate, "ase": ase, "aoe": aoe, "ave": ave, "aae": 1.0}, flags


def nds(map_value, errors):
    """Composite score: half from mAP, half from the five error terms,
    each error clipped at 1 and counted as its complement."""
    total = 5.0 * map_value
    for key in TP_ERROR_KEYS:
        total += 1.0 - min(1.0, errors[key])
    return total / 10.0


@dataclass(frozen=True)
class MetricsReport:
    config: dict
    per_class: dict  # class -> {"ap": ..., "ap@<thr>": ..., errors...}
    aggregate: dict  # {"map", "ate", "ase", "aoe", "ave", "aae", "nds"}
    flags: dict

    def describe(self):
        """Fixed-width human-readable table."""
        lines = []
        header = (f"{'class':<22}{'AP':>8}{'ATE':>8}{'ASE':>8}"
                  f"{'AOE':>8}{'AVE':>8}{'AAE':>8}")
        lines.append(header)
        lines.append("-" * len(header))
        for cls in sorted(self.per_class):
            row = self.per_class[cls]
            lines.append(f"{cls:<22}{row['ap']:>8.4f}{row['ate']:>8.4f}"
                         f"{row['ase']:>8.4f}{row['aoe']:>8.4f}"
                         f"{row['ave']:>8.4f}{row['aae']:>8.4f}")
        lines.append("-" * len(header))
        agg = self.aggregate
        lines.append(f"{'mean':<22}{agg['map']:>8.4f}{agg['ate']:>8.4f}"
                     f"{agg['ase']:>8.4f}{agg['aoe']:>8.4f}"
                     f"{agg['ave']:>8.4f}{agg['aae']:>8.4f}")
        lines.append(f"mAP: {agg['map']:.4f}")
        lines.append(f"NDS: {agg['nds']:.4f}")
        for key in sorted(self.flags):
            lines.append(f"note: {key} = {self.flags[key]}")
        return "\n".join(lines)


def _round4(x):
    return round(float(x), 4)


def evaluate(preds, gts, cfg):
    """Score predictions against ground truth; returns a MetricsReport.

    Ground truth defines the frame universe: a prediction naming an unknown
    frame is an input error, as is an uncalibrated external prediction or an
    empty ground-truth list. Classes are evaluated if they appear in the
    ground truth; predicted classes never seen in it are skipped and
    flagged. All reported values are rounded to 4 decimals.
    """
    if not gts:
        raise ValueError("cannot evaluate against empty ground truth")
    gt_frames = {g.frame_id for g in gts}
    for p in preds:
        if p.source == "external":
            raise ValueError("external cuboids carry raw logits; calibrate "
                             "and fuse before evaluating")
        if p.frame_id not in gt_frames:
            raise ValueError(f"prediction references frame "
                             f"{p.frame_id!r} absent from ground truth")
    if cfg.class_agnostic:
        preds = [replace(p, class_label="object") for p in preds]
        gts = [replace(g, class_label="object") for g in gts]

    classes = sorted({g.class_label for g in gts})
    flags = {}
    skipped = sorted({p.class_label for p in preds}
                     - {g.class_label for g in gts})
    if skipped:
        flags["classes_without_ground_truth"] = skipped

    per_class = {}
    for cls in classes:
        cls_preds = [p for p in preds if p.class_label == cls]
        cls_gts = [g for g in gts if g.class_label == cls]
        row = {}
        ap_values = []
        for thr in cfg.dist_thresholds:
            tp_flags, _ = match_by_center(cls_preds, cls_gts, thr)
            ap = average_precision(tp_flags, len(cls_gts), cfg.ap_mode,
                                   cfg.min_recall, cfg.min_precision)
            row[f"ap@{thr:g}"] = _round4(ap)
            ap_values.append(ap)
        _, pairs = match_by_center(cls_preds, cls_gts, cfg.tp_threshold)
        errors, err_flags = tp_errors(pairs, cfg.yaw_period_for(cls))
        for key, fired in err_flags.items():
            flags.setdefault(key, []).append(cls)
        row["ap"] = _round4(sum(ap_values) / len(ap_values))
        for key in TP_ERROR_KEYS:
            row[key] = _round4(errors[key])
        per_class[cls] = row

    aggregate = {"map": _round4(sum(per_class[c]["ap"] for c in classes)
                                / len(classes))}
    for key in TP_ERROR_KEYS:
        aggregate[key] = _round4(sum(per_class[c][key] for c in classes)
                                 / len(classes))
    aggregate["nds"] = _round4(nds(aggregate["map"], aggregate))
    return MetricsReport(config=cfg.as_dict(), per_class=per_class,
                         aggregate=aggregate, flags=flags)


def write_report(report, path):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": report.config,
        "per_class": report.per_class,
        "aggregate": report.aggregate,
        "flags": report.flags,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def read_report(path):
    doc = _load_json(path, "metrics report")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise BundleError(f"{path}: schema_version "
                          f"{doc.get('schema_version')!r}, expected "
                          f"{SCHEMA_VERSION}")
    for key in ("config", "per_class", "aggregate", "flags"):
        if key not in doc:
            raise BundleError(f"{path}: missing {key}")
    return MetricsReport(config=doc["config"], per_class=doc["per_class"],
                         aggregate=doc["aggregate"], flags=doc["flags"])
