"""Small planar-geometry helpers shared across the stack.

Angle-valued outputs are always wrapped to (-pi, pi].
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(angle):
    """Wrap angles to (-pi, pi]. Works on scalars and arrays."""
    wrapped = np.mod(angle, TWO_PI)
    wrapped = np.where(wrapped > np.pi, wrapped - TWO_PI, wrapped)
    if np.isscalar(angle) or np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def rotate_points(points: np.ndarray, angle: float) -> np.ndarray:
    """Rotate an (..., 2) array of points about the origin."""
    c, s = np.cos(angle), np.sin(angle)
    x = points[..., 0] * c - points[..., 1] * s
    y = points[..., 0] * s + points[..., 1] * c
    return np.stack([x, y], axis=-1)


def signed_angle_between(a: np.ndarray, b: np.ndarray):
    """Signed angle from vector(s) a to vector(s) b, in (-pi, pi].

    Zero-length inputs map to 0 by convention (any angle would be valid).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    ang = np.arctan2(cross, dot)
    degenerate = (np.hypot(a[..., 0], a[..., 1]) == 0.0) | (np.hypot(b[..., 0], b[..., 1]) == 0.0)
    ang = np.where(degenerate, 0.0, ang)
    ang = wrap_angle(ang)
    if np.ndim(ang) == 0:
        return float(ang)
    return ang


def heading_vector(heading):
    """Unit vector(s) (cos h, sin h) for heading(s), shape (..., 2)."""
    return np.stack([np.cos(heading), np.sin(heading)], axis=-1)


def polyline_arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length per vertex of an (N, 2) polyline, s[0] = 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_segment_distances(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distances from (N, 2) points to (S, 2)-(S, 2) segments, shape (N, S)."""
    d = seg_b - seg_a  # (S, 2)
    len2 = np.maximum(np.einsum("sk,sk->s", d, d), 1e-18)
    ap = points[:, None, :] - seg_a[None, :, :]  # (N, S, 2)
    t = np.clip(np.einsum("nsk,sk->ns", ap, d) / len2, 0.0, 1.0)
    proj = seg_a[None, :, :] + t[..., None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - proj, axis=-1)


def footprint_corners(center: np.ndarray, heading: float, length: float, width: float) -> np.ndarray:
    """Corners (4, 2) of an oriented rectangle footprint, counter-clockwise."""
    half = np.array(
        [
            [length / 2.0, width / 2.0],
            [-length / 2.0, width / 2.0],
            [-length / 2.0, -width / 2.0],
            [length / 2.0, -width / 2.0],
        ]
    )
    return rotate_points(half, heading) + np.asarray(center)[None, :]


def _project_extent(corners: np.ndarray, axis: np.ndarray) -> tuple:
    vals = corners @ axis
    return vals.min(), vals.max()


def obb_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis overlap test for two convex quads given as (4, 2) corners."""
    for corners in (corners_a, corners_b):
        for i in range(2):
            edge = corners[(i + 1) % 4] - corners[i]
            norm = np.hypot(edge[0], edge[1])
            if norm == 0.0:
                continue
            axis = np.array([-edge[1], edge[0]]) / norm
            amin, amax = _project_extent(corners_a, axis)
            bmin, bmax = _project_extent(corners_b, axis)
            if amax < bmin or bmax < amin:
                return False
    return True
