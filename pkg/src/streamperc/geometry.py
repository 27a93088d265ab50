"""Oriented 3D box geometry: BEV footprints, rotated IoU, IoU matrices.

Boxes live in the camera frame (x right, y down, z forward). The BEV plane
is (x, z); yaw rotates the l x w footprint about the vertical (y) axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

# On-edge classification tolerance for polygon clipping.
_EDGE_EPS = 1e-9
# Footprints smaller than this are treated as degenerate (IoU 0).
_DEGENERATE_AREA = 1e-12


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass
class Box3D:
    """Oriented 3D box: center (x, y, z), dims (h, w, l), yaw about vertical.

    y is the *bottom* center per KITTI convention; the box spans [y-h, y]
    vertically.
    """

    center: tuple  # (x, y, z) meters
    dims: tuple  # (h, w, l) meters
    yaw: float  # radians, (-pi, pi]
    score: float = 0.0
    class_id: int = 0
    track_id: Optional[int] = None

    def __post_init__(self):
        h, w, l = self.dims
        if h <= 0 or w <= 0 or l <= 0:
            raise ValueError("box dims must be positive, got %r" % (self.dims,))
        self.yaw = normalize_angle(self.yaw)

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l

    @property
    def bev_area(self) -> float:
        _, w, l = self.dims
        return w * l


def bev_corners(box: Box3D) -> np.ndarray:
    """Return the 4 BEV footprint corners (x, z), counter-clockwise.

    The footprint is l (along heading) by w, rotated by yaw about the
    box center.
    """
    cx, _, cz = box.center
    _, w, l = box.dims
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # local corners (forward, left) in CCW order
    local = np.array(
        [
            [l / 2.0, w / 2.0],
            [-l / 2.0, w / 2.0],
            [-l / 2.0, -w / 2.0],
            [l / 2.0, -w / 2.0],
        ]
    )
    rot = np.array([[c, -s], [s, c]])
    pts = local @ rot.T
    pts[:, 0] += cx
    pts[:, 1] += cz
    if polygon_area(pts) < 0:
        pts = pts[::-1]
    return pts


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise order."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, z = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))


def _clip_polygon(subject: np.ndarray, cp1, cp2):
    """Clip a polygon against the half-plane left of the edge cp1->cp2."""
    ex, ez = cp2[0] - cp1[0], cp2[1] - cp1[1]

    def side(p):
        return ex * (p[1] - cp1[1]) - ez * (p[0] - cp1[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur = subject[i]
        prev = subject[i - 1]
        sc, sp = side(cur), side(prev)
        if sc >= -_EDGE_EPS:
            if sp < -_EDGE_EPS:
                out.append(_intersect(prev, cur, cp1, cp2))
            out.append(tuple(cur))
        elif sp >= -_EDGE_EPS:
            out.append(_intersect(prev, cur, cp1, cp2))
    return out


def _intersect(p1, p2, q1, q2):
    """Intersection of lines p1-p2 and q1-q2."""
    dpx, dpz = p2[0] - p1[0], p2[1] - p1[1]
    dqx, dqz = q2[0] - q1[0], q2[1] - q1[1]
    denom = dpx * dqz - dpz * dqx
    if abs(denom) < _EDGE_EPS * _EDGE_EPS:
        return (p2[0], p2[1])
    t = ((q1[0] - p1[0]) * dqz - (q1[1] - p1[1]) * dqx) / denom
    return (p1[0] + t * dpx, p1[1] + t * dpz)


def polygon_intersection_area(a: Sequence, b: Sequence) -> float:
    """Area of the intersection of two convex polygons (Sutherland-Hodgman)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 3 or len(b) < 3:
        return 0.0
    if polygon_area(a) < 0:
        a = a[::-1]
    if polygon_area(b) < 0:
        b = b[::-1]
    poly = [tuple(p) for p in a]
    nb = len(b)
    for i in range(nb):
        if len(poly) < 3:
            return 0.0
        poly = _clip_polygon(np.asarray(poly), b[i - 1], b[i])
    if len(poly) < 3:
        return 0.0
    return abs(polygon_area(np.asarray(poly)))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated IoU of the BEV footprints."""
    area_a, area_b = a.bev_area, b.bev_area
    if area_a < _DEGENERATE_AREA or area_b < _DEGENERATE_AREA:
        return 0.0
    inter = polygon_intersection_area(bev_corners(a), bev_corners(b))
    union = area_a + area_b - inter
    if union <= _DEGENERATE_AREA:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Rotated 3D IoU: BEV intersection x vertical overlap over volume union.

    The vertical extent is [y - h, y]: y is the bottom-center coordinate.
    """
    area_a, area_b = a.bev_area, b.bev_area
    if area_a < _DEGENERATE_AREA or area_b < _DEGENERATE_AREA:
        return 0.0
    inter_bev = polygon_intersection_area(bev_corners(a), bev_corners(b))
    ya_top, ya_bot = a.center[1] - a.dims[0], a.center[1]
    yb_top, yb_bot = b.center[1] - b.dims[0], b.center[1]
    overlap = min(ya_bot, yb_bot) - max(ya_top, yb_top)
    if overlap <= 0.0:
        return 0.0
    inter = inter_bev * overlap
    union = a.volume + b.volume - inter
    if union <= _DEGENERATE_AREA:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D], kind: str = "bev") -> np.ndarray:
    """Pairwise IoU matrix, shape (len(boxes_a), len(boxes_b))."""
    if kind == "bev":
        fn = iou_bev
    elif kind == "3d":
        fn = iou_3d
    else:
        raise ValueError("kind must be 'bev' or '3d', got %r" % kind)
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = fn(a, b)
    return out
