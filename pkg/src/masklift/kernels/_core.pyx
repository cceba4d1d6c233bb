# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: rotated-rectangle intersection area and medoid.

masklift.kernels._reference mirrors the arithmetic of this module; keep the
two in lockstep when changing either.
"""
from libc.math cimport sqrt

import numpy as np


def medoid_index(double[:, ::1] points):
    """Index of the point minimizing the summed Euclidean distance to all
    other points. Ties resolve to the lowest index. O(n^2)."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    if n == 0:
        raise ValueError("medoid of an empty point set is undefined")
    cdef double[::1] totals = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double d, acc
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(dim):
                d = points[i, k] - points[j, k]
                acc += d * d
            d = sqrt(acc)
            totals[i] += d
            totals[j] += d
    cdef Py_ssize_t best = 0
    for i in range(1, n):
        if totals[i] < totals[best]:
            best = i
    return best


cdef inline double _cross(double ox, double oy, double ax, double ay,
                          double bx, double by) nogil:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def rect_intersection_area(double[:, ::1] a, double[:, ::1] b):
    """Intersection area of two convex quadrilaterals given as (4, 2) corner
    arrays in counter-clockwise order.

    Sutherland-Hodgman clipping of a against each edge of b, then the
    shoelace formula. Points exactly on a clip edge count as inside, so a
    rectangle clipped against itself survives intact.
    """
    # ping-pong buffers; a convex quad clipped by a quad has at most 8
    # vertices, but float jitter on degenerate slivers can emit more, so
    # size generously and guard every write
    cdef double bufx[64]
    cdef double bufy[64]
    cdef double outx[64]
    cdef double outy[64]
    cdef Py_ssize_t n = 4, m, i, j
    cdef double cx, cy, dx, dy, px, py, qx, qy, sp, sq, t
    for i in range(4):
        bufx[i] = a[i, 0]
        bufy[i] = a[i, 1]
    for j in range(4):
        cx = b[j, 0]
        cy = b[j, 1]
        dx = b[(j + 1) % 4, 0]
        dy = b[(j + 1) % 4, 1]
        m = 0
        for i in range(n):
            px = bufx[i]
            py = bufy[i]
            qx = bufx[(i + 1) % n]
            qy = bufy[(i + 1) % n]
            sp = _cross(cx, cy, dx, dy, px, py)
            sq = _cross(cx, cy, dx, dy, qx, qy)
            if sp >= 0.0 and m < 63:
                outx[m] = px
                outy[m] = py
                m += 1
            if (sp >= 0.0) != (sq >= 0.0) and m < 63:
                t = sp / (sp - sq)
                outx[m] = px + t * (qx - px)
                outy[m] = py + t * (qy - py)
                m += 1
        n = m
        if n == 0:
            return 0.0
        for i in range(n):
            bufx[i] = outx[i]
            bufy[i] = outy[i]
    cdef double area = 0.0
    for i in range(n):
        j = (i + 1) % n
        area += bufx[i] * bufy[j] - bufx[j] * bufy[i]
    if area < 0.0:
        area = -area
    return 0.5 * area
