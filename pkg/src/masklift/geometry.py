"""Rigid transforms, pinhole projection, and oriented-box overlap.

Conventions used across the package:
  * right-handed coordinates, z up in ego/world frames
  * camera frame: x right, y down, z forward (optical axis)
  * yaw is rotation about +z, measured from +x, normalized to (-pi, pi]
  * boxes are (width, length, height): length runs along the heading
"""
from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

from . import kernels

TWO_PI = 2.0 * math.pi


def normalize_yaw(yaw):
    """Wrap an angle in radians to the half-open interval (-pi, pi]."""
    wrapped = math.fmod(yaw, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def _quat_multiply(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return (
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    )


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def quaternion_from_matrix(m):
    """Unit quaternion (w, x, y, z) for a 3x3 rotation matrix.

    Shepperd's method: branch on the largest diagonal combination so the
    divisor is always well away from zero.
    """
    m = np.asarray(m, dtype=np.float64)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    norm = math.sqrt(w * w + x * x + y * y + z * z)
    q = (w / norm, x / norm, y / norm, z / norm)
    if q[0] < 0.0:  # canonical sign: w >= 0
        q = (-q[0], -q[1], -q[2], -q[3])
    return q


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform stored as a unit quaternion (w, x, y, z) plus a
    translation (x, y, z).

    apply() maps points from the pose's source frame into its target frame:
    for an ego pose, ego coordinates in, world coordinates out.
    """
    rotation: tuple
    translation: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in self.rotation)
        t = tuple(float(v) for v in self.translation)
        if len(q) != 4 or len(t) != 3:
            raise ValueError("rotation must have 4 components, translation 3")
        if not all(math.isfinite(v) for v in q + t):
            raise ValueError("pose contains non-finite components")
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm!r} is not 1 within 1e-9")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @classmethod
    def from_yaw(cls, yaw, translation=(0.0, 0.0, 0.0)):
        half = 0.5 * yaw
        return cls((math.cos(half), 0.0, 0.0, math.sin(half)),
                   tuple(float(v) for v in translation))

    @classmethod
    def from_rotation_matrix(cls, matrix, translation=(0.0, 0.0, 0.0)):
        return cls(quaternion_from_matrix(matrix),
                   tuple(float(v) for v in translation))

    @cached_property
    def rotation_matrix(self):
        return _quat_to_matrix(self.rotation)

    def compose(self, other):
        """Pose equivalent to applying `other` first, then `self`."""
        q = _quat_multiply(self.rotation, other.rotation)
        norm = math.sqrt(sum(v * v for v in q))
        q = tuple(v / norm for v in q)
        t = self.rotation_matrix @ np.asarray(other.translation) \
            + np.asarray(self.translation)
        return SE3Pose(q, tuple(t))

    def invert(self):
        w, x, y, z = self.rotation
        conj = (w, -x, -y, -z)
        t = -(_quat_to_matrix(conj) @ np.asarray(self.translation))
        return SE3Pose(conj, tuple(t))

    def apply(self, points):
        """Transform an (n, 3) array of points. Rejects non-finite input."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) array, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point array contains non-finite values")
        return pts @ self.rotation_matrix.T + np.asarray(self.translation)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the camera-to-ego rigid transform."""
    camera_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: SE3Pose  # camera frame -> ego frame

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError(f"camera {self.camera_id}: focal lengths must "
                             f"be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.camera_id}: image size must be "
                             f"positive, got {self.width}x{self.height}")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ValueError(f"camera {self.camera_id}: principal point "
                             f"({self.cx}, {self.cy}) outside the image")


def project_to_image(points_cam, cam):
    """Project camera-frame points through the pinhole model.

    Returns (uvd, valid): uvd is (n, 3) pixel u, pixel v, and depth (camera
    z); valid marks points with positive depth that land inside the image
    (u in [0, width), v in [0, height)). Rows for invalid points are kept so
    indices line up with the input; their u, v are zeroed when depth <= 0.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got {pts.shape}")
    z = pts[:, 2]
    front = z > 0.0
    safe_z = np.where(front, z, 1.0)
    u = np.where(front, cam.fx * pts[:, 0] / safe_z + cam.cx, 0.0)
    v = np.where(front, cam.fy * pts[:, 1] / safe_z + cam.cy, 0.0)
    valid = front & (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return np.stack([u, v, z], axis=1), valid


def back_project(uvd, cam):
    """Invert project_to_image: pixel coordinates plus depth back to
    camera-frame points. Depths must be positive."""
    arr = np.asarray(uvd, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got {arr.shape}")
    if np.any(arr[:, 2] <= 0.0):
        raise ValueError("back-projection requires positive depth")
    z = arr[:, 2]
    x = (arr[:, 0] - cam.cx) * z / cam.fx
    y = (arr[:, 1] - cam.cy) * z / cam.fy
    return np.stack([x, y, z], axis=1)


@dataclass(frozen=True)
class BevRect:
    """Rotated rectangle in the ground plane."""
    center_x: float
    center_y: float
    width: float
    length: float
    yaw: float

    def __post_init__(self):
        if self.width <= 0.0 or self.length <= 0.0:
            raise ValueError(f"rectangle extents must be positive, got "
                             f"width={self.width} length={self.length}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


def rect_corners(rect):
    """Counter-clockwise (4, 2) corner array of a BevRect."""
    c, s = math.cos(rect.yaw), math.sin(rect.yaw)
    hl, hw = 0.5 * rect.length, 0.5 * rect.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([rect.center_x, rect.center_y])


def bev_iou(a, b):
    """Intersection over union of two rotated ground-plane rectangles."""
    ca = np.ascontiguousarray(rect_corners(a))
    cb = np.ascontiguousarray(rect_corners(b))
    inter = kernels.rect_intersection_area(ca, cb)
    union = a.width * a.length + b.width * b.length - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _bev_rect_of(box):
    return BevRect(box.center[0], box.center[1], box.dims[0], box.dims[1],
                   box.yaw)


def iou3d(a, b):
    """3D IoU of two upright boxes: BEV intersection times vertical overlap.

    Accepts any objects with center (x, y, z), dims (width, length, height)
    and yaw attributes; boxes are axis-aligned in z.
    """
    ca = np.ascontiguousarray(rect_corners(_bev_rect_of(a)))
    cb = np.ascontiguousarray(rect_corners(_bev_rect_of(b)))
    bev_inter = kernels.rect_intersection_area(ca, cb)
    za0, za1 = a.center[2] - 0.5 * a.dims[2], a.center[2] + 0.5 * a.dims[2]
    zb0, zb1 = b.center[2] - 0.5 * b.dims[2], b.center[2] + 0.5 * b.dims[2]
    z_overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = bev_inter * z_overlap
    vol_a = a.dims[0] * a.dims[1] * a.dims[2]
    vol_b = b.dims[0] * b.dims[1] * b.dims[2]
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_corners_3d(center, dims, yaw):
    """(8, 3) corners of an upright oriented box.

    Order: the four bottom corners counter-clockwise starting at
    (+length/2, +width/2), then the four top corners in the same sequence.
    """
    w, l, h = dims
    c, s = math.cos(yaw), math.sin(yaw)
    hx, hy, hz = 0.5 * l, 0.5 * w, 0.5 * h
    local = np.array([
        [hx, hy, -hz], [-hx, hy, -hz], [-hx, -hy, -hz], [hx, -hy, -hz],
        [hx, hy, hz], [-hx, hy, hz], [-hx, -hy, hz], [hx, -hy, hz],
    ])
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(center, dtype=np.float64)
