"""Heading-up binary map rasters around a route position.

A render covers a 200 m x 200 m window at 575 x 575 pixels with the query
pose at pixel (row 287, col 287), heading pointing toward decreasing rows.
Channels: 0 = all roads, 1 = route ahead, 2 = route behind. Route channels
are stroked at 1.5x the road width and clipped to the road channel, so they
are always pixelwise subsets of it.
"""
from __future__ import annotations

import math

import numpy as np

from . import geom
from .road_graph import RoadGraph, Route

SIZE = 575
EXTENT_M = 200.0
CENTER_PX = 287
PX_PER_M = SIZE / EXTENT_M  # 2.875
ROUTE_STROKE_FACTOR = 1.5


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def _frame_axes(heading: float) -> tuple[np.ndarray, np.ndarray]:
    u = geom.heading_to_unit(heading)          # forward
    r = np.array([u[1], -u[0]])                # right of heading
    return u, r


def world_to_pixel(p, center, heading: float) -> tuple[int, int]:
    """Map a world point to (row, col); round-half-up on each pixel offset."""
    u, r = _frame_axes(heading)
    d = np.asarray(p, dtype=float) - np.asarray(center, dtype=float)
    fwd = float(d @ u)
    right = float(d @ r)
    row = CENTER_PX - int(_round_half_up(fwd * PX_PER_M))
    col = CENTER_PX + int(_round_half_up(right * PX_PER_M))
    return row, col


def _to_rowcol(points: np.ndarray, center, heading: float) -> np.ndarray:
    """Continuous (row, col) coordinates of world points (no rounding)."""
    u, r = _frame_axes(heading)
    d = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    rows = CENTER_PX - d @ u * PX_PER_M
    cols = CENTER_PX + d @ r * PX_PER_M
    return np.stack([rows, cols], axis=1)


def _fill_quad(mask: np.ndarray, corners: np.ndarray):
    """Set pixels whose integer centers lie inside a convex quad (inclusive)."""
    # orient counter-clockwise in (row, col) space
    area2 = 0.0
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        area2 += a[0] * b[1] - b[0] * a[1]
    if area2 < 0:
        corners = corners[::-1]
    r0 = max(int(math.ceil(corners[:, 0].min())), 0)
    r1 = min(int(math.floor(corners[:, 0].max())), mask.shape[0] - 1)
    c0 = max(int(math.ceil(corners[:, 1].min())), 0)
    c1 = min(int(math.floor(corners[:, 1].max())), mask.shape[1] - 1)
    if r0 > r1 or c0 > c1:
        return
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1),
                         indexing="ij")
    inside = np.ones(rr.shape, dtype=bool)
    for i in range(4):
        a = corners[i]
        b = corners[(i + 1) % 4]
        cross = (b[0] - a[0]) * (cc - a[1]) - (b[1] - a[1]) * (rr - a[0])
        inside &= cross >= -1e-9
    mask[r0:r1 + 1, c0:c1 + 1] |= inside


def _stroke_polyline(mask: np.ndarray, pts_rc: np.ndarray, width_px: float):
    half = width_px / 2.0
    for a, b in zip(pts_rc[:-1], pts_rc[1:]):
        d = b - a
        n = float(np.hypot(d[0], d[1]))
        if n == 0:
            continue
        # quick reject for pieces far outside the raster
        lo = np.minimum(a, b) - half
        hi = np.maximum(a, b) + half
        if hi[0] < 0 or hi[1] < 0 or lo[0] > mask.shape[0] - 1 or lo[1] > mask.shape[1] - 1:
            continue
        u = d / n
        perp = np.array([-u[1], u[0]]) * half
        corners = np.array([a - perp, a + perp, b + perp, b - perp])
        _fill_quad(mask, corners)


def _sub_polyline(pl: np.ndarray, cums: np.ndarray, s0: float, s1: float) -> np.ndarray:
    if s1 - s0 <= 1e-9:
        return np.empty((0, 2))
    p0 = geom.point_at(pl, cums, s0)
    p1 = geom.point_at(pl, cums, s1)
    inner = pl[(cums > s0) & (cums < s1)]
    return np.concatenate([[p0], inner, [p1]], axis=0)


def render(g: RoadGraph, route: Route, position: float, heading: float) -> np.ndarray:
    """Render the map around route offset `position` with the given heading.

    Returns float64 (3, 575, 575) with values in {0.0, 1.0}.
    """
    if not (-1e-9 <= position <= route.length + 1e-9):
        raise ValueError(f"position {position} outside route")
    center = route.point_at(position)
    road = np.zeros((SIZE, SIZE), dtype=bool)
    ahead = np.zeros((SIZE, SIZE), dtype=bool)
    behind = np.zeros((SIZE, SIZE), dtype=bool)

    for sid in sorted(g.segments):
        seg = g.segments[sid]
        pts = _to_rowcol(seg.polyline, center, heading)
        _stroke_polyline(road, pts, seg.width * PX_PER_M)

    for leg in route.legs:
        seg = g.segments[leg.segment_id]
        w = seg.width * ROUTE_STROKE_FACTOR * PX_PER_M
        if leg.end_offset > position:
            sub = _sub_polyline(route.polyline, route.cums,
                                max(position, leg.offset), leg.end_offset)
            if len(sub):
                _stroke_polyline(ahead, _to_rowcol(sub, center, heading), w)
        if leg.offset < position:
            sub = _sub_polyline(route.polyline, route.cums,
                                leg.offset, min(position, leg.end_offset))
            if len(sub):
                _stroke_polyline(behind, _to_rowcol(sub, center, heading), w)

    out = np.zeros((3, SIZE, SIZE), dtype=float)
    out[0] = road
    out[1] = ahead & road
    out[2] = behind & road
    return out


def to_ppm(raster: np.ndarray) -> bytes:
    """Binary PPM (P6); channels 0/1/2 on R/G/B at 0 or 255."""
    assert raster.shape == (3, SIZE, SIZE)
    rgb = (np.transpose(raster, (1, 2, 0)) * 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (SIZE, SIZE) + rgb.tobytes()


def to_pgm(raster: np.ndarray, channel: int) -> bytes:
    """Binary PGM (P5) of a single channel."""
    ch = (raster[channel] * 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (SIZE, SIZE) + ch.tobytes()


def box_downsample(raster: np.ndarray, out_size: int = 64) -> np.ndarray:
    """Average-pool (C, H, W) down to (C, out_size, out_size).

    Source pixel i lands in bin floor(i * out_size / H), so uneven bin sizes
    are handled exactly and H need not be a multiple of out_size.
    """
    c, h, w = raster.shape
    if out_size > min(h, w):
        raise ValueError(f"cannot upsample {h}x{w} to {out_size}")
    rows = np.floor(np.arange(h) * out_size / h).astype(int)
    cols = np.floor(np.arange(w) * out_size / w).astype(int)
    rmat = np.zeros((out_size, h))
    rmat[rows, np.arange(h)] = 1.0
    rmat /= rmat.sum(axis=1, keepdims=True)
    cmat = np.zeros((out_size, w))
    cmat[cols, np.arange(w)] = 1.0
    cmat /= cmat.sum(axis=1, keepdims=True)
    return np.einsum("rh,chw,sw->crs", rmat, raster, cmat, optimize=True)
