"""Late fusion of pseudo-label cuboids with an external detector's boxes.

External boxes arrive with raw logit scores; calibrate() squashes them to
probabilities with a temperatured sigmoid so they compare against
pseudo-label scores. Matching is greedy one-to-one on BEV IoU within each
frame, class-agnostic (the external detector's taxonomy need not line up).
A matched pair keeps the pseudo-label's center, class, and score; extent,
yaw, and velocity come from whichever member scores higher. Unmatched
pseudo-labels pass through untouched; unmatched external boxes are dropped.
"""
from dataclasses import dataclass
import math

from .geometry import BevRect, bev_iou
from .scene_io import Cuboid


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 1.0
    iou_min: float = 0.1

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.iou_min <= 1.0:
            raise ValueError(f"iou_min must be in (0, 1], got "
                             f"{self.iou_min}")

    def as_dict(self):
        return {"tau": self.tau, "iou_min": self.iou_min}


def calibrate(logit, tau):
    """Temperatured sigmoid: logit -> probability in (0, 1)."""
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = logit / tau
    # split on sign for numerical stability at large |x|
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class MatchReport:
    """Outcome of greedy matching: index pairs into the two input lists
    plus the leftovers."""
    pairs: tuple  # of (cm3d_index, external_index, iou)
    unmatched_cm3d: tuple
    unmatched_external: tuple


def _rect(c):
    return BevRect(c.center[0], c.center[1], c.dims[0], c.dims[1], c.yaw)


def greedy_match(cm3d, external, iou_min):
    """One-to-one greedy matching on BEV IoU, frame by frame.

    Candidate pairs with IoU >= iou_min are taken in descending IoU order;
    exact ties resolve to the lower (cm3d_index, external_index) pair. A
    cuboid participates in at most one pair.
    """
    candidates = []
    for i, a in enumerate(cm3d):
        ra = _rect(a)
        for j, b in enumerate(external):
            if a.frame_id != b.frame_id:
                continue
            iou = bev_iou(ra, _rect(b))
            if iou >= iou_min:
                candidates.append((-iou, i, j))
    candidates.sort()
    used_a, used_b = set(), set()
    pairs = []
    for neg_iou, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j, -neg_iou))
    return MatchReport(
        pairs=tuple(pairs),
        unmatched_cm3d=tuple(i for i in range(len(cm3d))
                             if i not in used_a),
        unmatched_external=tuple(j for j in range(len(external))
                                 if j not in used_b),
    )


def fuse(cm3d, external, cfg):
    """Fused cuboid list in cm3d input order; see the module docstring for
    the pairing rules. Returns (cuboids, match_report)."""
    for b in external:
        if b.source != "external":
            raise ValueError(f"expected source 'external', got "
                             f"{b.source!r}")
    calibrated = [calibrate(b.score, cfg.tau) for b in external]
    report = greedy_match(cm3d, external, cfg.iou_min)
    by_cm3d = {i: (j, iou) for i, j, iou in report.pairs}
    out = []
    for i, a in enumerate(cm3d):
        if i not in by_cm3d:
            out.append(a)
            continue
        j, _ = by_cm3d[i]
        b = external[j]
        # external wins geometry only when strictly more confident
        if calibrated[j] > a.score:
            dims, yaw, velocity = b.dims, b.yaw, b.velocity
        else:
            dims, yaw, velocity = a.dims, a.yaw, a.velocity
        out.append(Cuboid(
            frame_id=a.frame_id,
            class_label=a.class_label,
            score=a.score,
            center=a.center,
            dims=dims,
            yaw=yaw,
            velocity=velocity,
            source="fused",
        ))
    return out, report
