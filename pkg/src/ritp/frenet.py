"""Reference-line arc-length parameterization and Cartesian <-> Frenet transforms.

A ReferenceLine is a polyline resampled at ~1 m spacing with linear
interpolation between samples. Lateral offsets are signed left-positive with
respect to the local tangent.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import polyline_arclength, wrap_angle

RESAMPLE_SPACING = 1.0  # m
DEFAULT_CORRIDOR = 50.0  # m


class OutOfCorridorError(ValueError):
    pass


class FrenetClampWarning(UserWarning):
    """Emitted when an s coordinate outside [0, length] is clamped."""


@dataclass(frozen=True)
class FrenetPose:
    s: float
    l: float


class ReferenceLine:
    """Arc-length parameterized polyline with per-point tangent headings."""

    def __init__(self, points: np.ndarray, resample: bool = True):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] != 2:
            raise ValueError("reference line needs an (N>=2, 2) polyline")
        if resample:
            points = self._resample(points, RESAMPLE_SPACING)
        self.points = points
        self.s = polyline_arclength(points)
        if np.any(np.diff(self.s) <= 0.0):
            raise ValueError("arc length must be strictly increasing")
        tangents = np.diff(points, axis=0)
        headings = np.arctan2(tangents[:, 1], tangents[:, 0])
        # per-point heading: average of adjacent segment headings, endpoint-extended
        mid = headings[:-1] + 0.5 * wrap_angle(headings[1:] - headings[:-1])
        self.headings = np.concatenate([[headings[0]], wrap_angle(mid), [headings[-1]]])
        jumps = np.abs(wrap_angle(np.diff(self.headings)))
        if np.any(jumps > np.pi / 2):
            raise ValueError("tangent discontinuity > pi/2 between consecutive points")

    @staticmethod
    def _resample(points: np.ndarray, spacing: float) -> np.ndarray:
        s = polyline_arclength(points)
        total = s[-1]
        n = max(int(np.ceil(total / spacing)) + 1, 2)
        si = np.linspace(0.0, total, n)
        x = np.interp(si, s, points[:, 0])
        y = np.interp(si, s, points[:, 1])
        return np.stack([x, y], axis=1)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def heading_at(self, s) -> np.ndarray:
        """Tangent heading at arc length(s) s, linearly interpolated."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        t = (s - self.s[idx]) / (self.s[idx + 1] - self.s[idx])
        dh = wrap_angle(self.headings[idx + 1] - self.headings[idx])
        return wrap_angle(self.headings[idx] + t * dh)

    def curvature_at(self, s) -> np.ndarray:
        """Curvature from finite differences of the tangent heading."""
        s = np.asarray(s, dtype=float)
        h = 0.5
        h0 = self.heading_at(np.maximum(s - h, 0.0))
        h1 = self.heading_at(np.minimum(s + h, self.length))
        ds = np.minimum(s + h, self.length) - np.maximum(s - h, 0.0)
        return wrap_angle(h1 - h0) / np.maximum(ds, 1e-9)

    def point_at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.stack([x, y], axis=-1)


def _segment_projection(p: np.ndarray, line: ReferenceLine):
    """Nearest-segment projection: (s, signed l, distance, segment index)."""
    a = line.points[:-1]
    b = line.points[1:]
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, d) / len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist = np.linalg.norm(proj - p[None, :], axis=1)
    i = int(np.argmin(dist))  # lowest index wins ties -> smaller s
    s = float(line.s[i] + t[i] * np.sqrt(len2[i]))
    tangent = d[i] / np.sqrt(len2[i])
    offset = p - proj[i]
    l = float(tangent[0] * offset[1] - tangent[1] * offset[0])  # left positive
    return s, l, float(dist[i]), i


def project_to_frenet(point, line: ReferenceLine, corridor: float = DEFAULT_CORRIDOR) -> FrenetPose:
    """Projection of a Cartesian point onto the line, inverse of to_cartesian.

    A nearest-segment scan seeds a bisection on the orthogonality condition
    (p - c(s)) . t(s) = 0 over the interpolated tangent field, which makes the
    round trip with to_cartesian exact wherever the projection is unique.
    Ties between equidistant segments resolve to the smaller s; points farther
    than `corridor` from the line are rejected.
    """
    p = np.asarray(point, dtype=float)
    s0, l0, dist, i = _segment_projection(p, line)
    if dist > corridor:
        raise OutOfCorridorError(f"point {p.tolist()} is {dist:.1f} m from the line (> {corridor} m)")

    def g(s):
        h = line.heading_at(s)
        delta = p - line.point_at(s)
        return float(delta[0] * np.cos(h) + delta[1] * np.sin(h))

    spacing = float(line.s[min(i + 1, len(line.s) - 1)] - line.s[i]) or 1.0
    width = 2.0 * spacing
    lo, hi = s0, s0
    for _ in range(3):
        lo = max(0.0, s0 - width)
        hi = min(line.length, s0 + width)
        if g(lo) >= 0.0 >= g(hi):
            break
        width *= 4.0
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo >= 0.0 >= g_hi):
        s = s0  # endpoint projection; no interior root
    else:
        for _ in range(70):
            mid = 0.5 * (lo + hi)
            if g(mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        s = 0.5 * (lo + hi)
    h = float(line.heading_at(s))
    delta = p - line.point_at(s)
    l = float(-np.sin(h) * delta[0] + np.cos(h) * delta[1])
    return FrenetPose(s=s, l=l)


def project_points_approx(points: np.ndarray, line: ReferenceLine):
    """Vectorized nearest-segment projection: arrays (s, l, distance).

    Accurate to the polyline resolution; use project_to_frenet where exact
    round trips matter.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = line.points[:-1]
    b = line.points[1:]
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("nij,ij->ni", pts[:, None, :] - a[None, :, :], d) / len2, 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * d[None, :, :]
    dist = np.linalg.norm(proj - pts[:, None, :], axis=2)
    i = np.argmin(dist, axis=1)
    rows = np.arange(pts.shape[0])
    seg_len = np.sqrt(len2[i])
    s = line.s[i] + t[rows, i] * seg_len
    tangent = d[i] / seg_len[:, None]
    offset = pts - proj[rows, i]
    l = tangent[:, 0] * offset[:, 1] - tangent[:, 1] * offset[:, 0]
    return s, l, dist[rows, i]


def to_cartesian(pose: FrenetPose, line: ReferenceLine) -> np.ndarray:
    """Inverse of project_to_frenet; s outside [0, length] clamps with a warning."""
    s = pose.s
    if s < 0.0 or s > line.length:
        warnings.warn(
            f"s={s:.3f} outside [0, {line.length:.3f}]; clamped", FrenetClampWarning, stacklevel=2
        )
        s = float(np.clip(s, 0.0, line.length))
    base = line.point_at(s)
    h = line.heading_at(s)
    normal = np.array([-np.sin(h), np.cos(h)])
    return base + pose.l * normal


def frenet_trajectory_to_cartesian(samples, line: ReferenceLine) -> np.ndarray:
    """Pointwise to_cartesian over >= 2 Frenet samples; returns (N, 2)."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    return np.stack([to_cartesian(p, line) for p in samples])


def frenet_arrays_to_cartesian(s: np.ndarray, l: np.ndarray, line: ReferenceLine) -> np.ndarray:
    """Vectorized Frenet -> Cartesian for arrays of s and l (silently clamps s)."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, line.length)
    base = line.point_at(s)
    h = line.heading_at(s)
    normal = np.stack([-np.sin(h), np.cos(h)], axis=-1)
    return base + np.asarray(l, dtype=float)[..., None] * normal
