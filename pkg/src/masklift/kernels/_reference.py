"""Pure-Python/numpy fallback for the compiled kernels.

Mirrors the arithmetic of masklift.kernels._core; keep the two in lockstep
when changing either. Summation order inside medoid_index differs from the
compiled module (numpy reductions vs sequential C loops), so cross-backend
results agree to float rounding, not bit-for-bit.
"""
import math

import numpy as np


def medoid_index(points):
    """Index of the point minimizing the summed Euclidean distance to all
    other points. Ties resolve to the lowest index. O(n^2)."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("medoid of an empty point set is undefined")
    totals = np.zeros(n, dtype=np.float64)
    # row-at-a-time keeps memory at O(n) instead of O(n^2)
    for i in range(n):
        diff = pts - pts[i]
        totals[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum()
    return int(np.argmin(totals))


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def rect_intersection_area(a, b):
    """Intersection area of two convex quadrilaterals given as (4, 2) corner
    arrays in counter-clockwise order.

    Sutherland-Hodgman clipping of a against each edge of b, then the
    shoelace formula. Points exactly on a clip edge count as inside, so a
    rectangle clipped against itself survives intact.
    """
    a = np.asarray(a, dtype=np.float64).tolist()
    b = np.asarray(b, dtype=np.float64).tolist()
    poly = [(p[0], p[1]) for p in a]
    for j in range(4):
        cx, cy = b[j][0], b[j][1]
        dx, dy = b[(j + 1) % 4][0], b[(j + 1) % 4][1]
        out = []
        n = len(poly)
        for i in range(n):
            px, py = poly[i]
            qx, qy = poly[(i + 1) % n]
            sp = _cross(cx, cy, dx, dy, px, py)
            sq = _cross(cx, cy, dx, dy, qx, qy)
            if sp >= 0.0:
                out.append((px, py))
            if (sp >= 0.0) != (sq >= 0.0):
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
        poly = out
        if not poly:
            return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        area += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1]
    return 0.5 * math.fabs(area)
