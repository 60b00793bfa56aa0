"""Planar geometry helpers shared across the map stack.

Convention used everywhere in this package: headings are degrees, 0 = +y
(north), positive counter-clockwise, normalized to [-180, 180).
"""
from __future__ import annotations

import math

import numpy as np


def normalize_heading(deg: float) -> float:
    """Wrap a heading (degrees) into [-180, 180)."""
    return ((deg + 180.0) % 360.0) - 180.0


def heading_to_unit(deg: float) -> np.ndarray:
    rad = math.radians(deg)
    return np.array([-math.sin(rad), math.cos(rad)])


def heading_of(vec) -> float:
    """Heading (degrees) of a direction vector. Zero vector maps to 0."""
    dx, dy = float(vec[0]), float(vec[1])
    return normalize_heading(math.degrees(math.atan2(-dx, dy)))


def rotate_points(points: np.ndarray, deg: float) -> np.ndarray:
    """Rotate points (N, 2) counter-clockwise about the origin."""
    rad = math.radians(deg)
    c, s = math.cos(rad), math.sin(rad)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(points, dtype=float) @ rot.T


def cumulative_lengths(polyline: np.ndarray) -> np.ndarray:
    """Arclength at each vertex of a polyline (N, 2); starts at 0."""
    pts = np.asarray(polyline, dtype=float)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(d)])


def polyline_length(polyline: np.ndarray) -> float:
    return float(cumulative_lengths(polyline)[-1])


def point_at(polyline: np.ndarray, cums: np.ndarray, s: float) -> np.ndarray:
    """Point at arclength s along the polyline, clamped to [0, length]."""
    pts = np.asarray(polyline, dtype=float)
    s = min(max(float(s), 0.0), float(cums[-1]))
    i = int(np.searchsorted(cums, s, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    seg = cums[i + 1] - cums[i]
    t = 0.0 if seg <= 0 else (s - cums[i]) / seg
    return pts[i] + t * (pts[i + 1] - pts[i])


def tangent_at(polyline: np.ndarray, cums: np.ndarray, s: float) -> np.ndarray:
    """Unit tangent of the piece containing arclength s (right-open pieces,
    clamped to the last piece at the end)."""
    pts = np.asarray(polyline, dtype=float)
    s = min(max(float(s), 0.0), float(cums[-1]))
    i = int(np.searchsorted(cums, s, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    d = pts[i + 1] - pts[i]
    n = np.linalg.norm(d)
    if n == 0:
        return np.array([0.0, 1.0])
    return d / n


def project_to_polyline(polyline: np.ndarray, p) -> tuple[float, np.ndarray, float]:
    """Project p onto the polyline.

    Returns (arclength, closest point, distance). Ties across pieces keep the
    smallest arclength.
    """
    pts = np.asarray(polyline, dtype=float)
    p = np.asarray(p, dtype=float)
    best = (0.0, pts[0].copy(), float(np.linalg.norm(p - pts[0])))
    acc = 0.0
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        d = b - a
        L2 = float(d @ d)
        if L2 == 0:
            acc += 0.0
            continue
        t = float(np.clip((p - a) @ d / L2, 0.0, 1.0))
        q = a + t * d
        dist = float(np.linalg.norm(p - q))
        if dist < best[2]:
            best = (acc + t * math.sqrt(L2), q, dist)
        acc += math.sqrt(L2)
    return best


def circumradius(a, b, c) -> float:
    """Circumradius of a triangle; inf when the points are collinear."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    ab = b - a
    ac = c - a
    cross = float(ab[0] * ac[1] - ab[1] * ac[0])
    area2 = abs(cross)  # twice the triangle area
    if area2 == 0:
        return math.inf
    la = float(np.linalg.norm(b - c))
    lb = float(np.linalg.norm(a - c))
    lc = float(np.linalg.norm(a - b))
    return la * lb * lc / (2.0 * area2)


def menger_curvature(a, b, c) -> float:
    """Unsigned Menger curvature (1 / circumradius); 0 for collinear points."""
    r = circumradius(a, b, c)
    return 0.0 if math.isinf(r) else 1.0 / r


def arc_points(center, radius: float, start_deg: float, end_deg: float,
               step_m: float = 2.0) -> np.ndarray:
    """Polyline approximating a CCW circular arc, vertices every ~step_m."""
    center = np.asarray(center, dtype=float)
    sweep = math.radians(end_deg - start_deg)
    n = max(2, int(math.ceil(abs(sweep) * radius / step_m)) + 1)
    angles = np.radians(np.linspace(start_deg, end_deg, n))
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
