"""Class-wise greedy 3D NMS on BEV center distance."""
import math


def _dist_xy(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def nms3d(cuboids, thresholds, ego_xy=(0.0, 0.0)):
    """Keep the strongest of any same-class cluster of cuboids.

    Candidates are visited score descending; score ties prefer the cuboid
    nearer the ego, then the earlier input index. A visited cuboid is
    dropped when its BEV center lies strictly closer than the class radius
    to an already-kept cuboid of the same class. Output preserves input
    order. Every class present must have a radius in thresholds.
    """
    for c in cuboids:
        if c.class_label not in thresholds:
            raise ValueError(f"no NMS threshold for class "
                             f"{c.class_label!r}")
    by_class = {}
    for idx, c in enumerate(cuboids):
        by_class.setdefault(c.class_label, []).append(idx)
    keep = set()
    for cls, indices in by_class.items():
        radius = thresholds[cls]
        order = sorted(indices, key=lambda i: (
            -cuboids[i].score, _dist_xy(cuboids[i].center, ego_xy), i))
        kept_here = []
        for i in order:
            c = cuboids[i]
            if all(_dist_xy(c.center, cuboids[j].center) >= radius
                   for j in kept_here):
                kept_here.append(i)
                keep.add(i)
    return [c for i, c in enumerate(cuboids) if i in keep]
