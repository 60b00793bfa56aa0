"""HMM map matching: snap noisy position traces onto the road graph.

Candidates come from a radius query per observation; emissions are Gaussian
in the point-to-segment distance; transitions penalize disagreement between
on-road distance and straight-line distance between consecutive fixes.
Decoding is exact log-domain Viterbi with ties broken toward the lower
candidate index.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .road_graph import GeoPoint, RoadGraph, nearest_segments


class MatchError(Exception):
    pass


class NoCandidateError(MatchError):
    def __init__(self, index: int, position):
        self.index = index
        self.position = (float(position[0]), float(position[1]))
        super().__init__(
            f"observation {index} at {self.position} has no road within radius")


class DisconnectedTraceError(MatchError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(
            f"no candidate at step {index} is route-connected to the previous step")


@dataclass(frozen=True)
class MatchParams:
    candidate_radius: float = 50.0   # m
    sigma_gps: float = 5.0           # m
    beta: float = 3.0                # m
    max_route_segments: int = 4      # path length bound for transitions


@dataclass(frozen=True)
class MatchedPoint:
    t: float
    segment_id: int
    arclength: float
    point: GeoPoint


@dataclass
class MatchedPath:
    points: list[MatchedPoint]
    route_segments: list[int]        # traversed order, consecutive-deduped


def emission_logprob(distance: float, sigma: float) -> float:
    """Log density of observing a fix `distance` meters off the road."""
    return -0.5 * (distance / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))


def transition_logprob(d_route: float, d_straight: float, beta: float) -> float:
    """Log density of the on-road vs straight-line distance mismatch."""
    return -abs(d_route - d_straight) / beta - math.log(beta)


def candidate_route_distance(g: RoadGraph, a: tuple[int, float], b: tuple[int, float],
                             max_segments: int = 4):
    """Shortest on-road distance between two on-segment positions.

    Only paths of at most max_segments segments (endpoints included, no
    repeats) are considered. Returns (distance, segment path) or None when no
    such path exists. Within one segment the direct arclength gap is used.
    """
    (ida, sa), (idb, sb) = (int(a[0]), float(a[1])), (int(b[0]), float(b[1]))
    best_dist = math.inf
    best_path = None
    if ida == idb:
        best_dist = abs(sb - sa)
        best_path = [ida]
    sega = g.segments[ida]
    stack = []
    for k in (0, 1):
        node = sega.endpoints[k]
        d0 = sa if k == 0 else sega.length - sa
        stack.append((node, d0, (ida,)))
    while stack:
        node, dist, path = stack.pop()
        if dist >= best_dist:
            continue
        for sid in sorted(g.intersections[node].incident_segments):
            if sid in path:
                continue
            seg = g.segments[sid]
            if sid == idb:
                if seg.endpoints[0] == seg.endpoints[1]:
                    extra = min(sb, seg.length - sb)  # loop segment
                elif seg.endpoints[0] == node:
                    extra = sb
                else:
                    extra = seg.length - sb
                total = dist + extra
                if total < best_dist:
                    best_dist = total
                    best_path = list(path) + [sid]
            elif len(path) + 2 <= max_segments:
                nxt = seg.endpoints[1] if seg.endpoints[0] == node else seg.endpoints[0]
                stack.append((nxt, dist + seg.length, path + (sid,)))
    if best_path is None:
        return None
    return best_dist, best_path


def _candidates(g, trace, params):
    cands = []
    for i, (_, x, y) in enumerate(trace):
        found = nearest_segments(g, (x, y), params.candidate_radius)
        if not found:
            raise NoCandidateError(i, (x, y))
        cands.append(found)
    return cands


def match_trace(g: RoadGraph, trace, params: MatchParams | None = None) -> MatchedPath:
    """Viterbi-decode a (t, x, y) trace onto the graph."""
    params = params or MatchParams()
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 2 or trace.shape[1] != 3 or len(trace) == 0:
        raise ValueError("trace must be a non-empty (T, 3) array of t, x, y")
    if np.any(np.diff(trace[:, 0]) <= 0):
        raise ValueError("trace timestamps must be strictly increasing")
    cands = _candidates(g, trace, params)

    score = np.array([emission_logprob(c[3], params.sigma_gps) for c in cands[0]])
    back: list[np.ndarray] = []
    for t in range(1, len(trace)):
        prev, cur = cands[t - 1], cands[t]
        d_straight = float(np.linalg.norm(trace[t, 1:] - trace[t - 1, 1:]))
        trans = np.full((len(prev), len(cur)), -np.inf)
        for i, (sid_i, _, s_i, _) in enumerate(prev):
            if score[i] == -np.inf:
                continue
            for j, (sid_j, _, s_j, _) in enumerate(cur):
                rd = candidate_route_distance(g, (sid_i, s_i), (sid_j, s_j),
                                              params.max_route_segments)
                if rd is not None:
                    trans[i, j] = transition_logprob(rd[0], d_straight, params.beta)
        total = score[:, None] + trans
        best_prev = total.max(axis=0)
        if np.all(best_prev == -np.inf):
            raise DisconnectedTraceError(t)
        back.append(total.argmax(axis=0))   # first max = lowest index
        emi = np.array([emission_logprob(c[3], params.sigma_gps) for c in cur])
        score = best_prev + emi

    idx = int(score.argmax())
    chosen = [idx]
    for bp in reversed(back):
        idx = int(bp[idx])
        chosen.append(idx)
    chosen.reverse()

    points = []
    for t, ci in enumerate(chosen):
        sid, q, s, _ = cands[t][ci]
        points.append(MatchedPoint(t=float(trace[t, 0]), segment_id=sid,
                                   arclength=float(s), point=q))
    route = [points[0].segment_id]
    for prev_pt, cur_pt in zip(points[:-1], points[1:]):
        rd = candidate_route_distance(
            g, (prev_pt.segment_id, prev_pt.arclength),
            (cur_pt.segment_id, cur_pt.arclength), params.max_route_segments)
        assert rd is not None  # guaranteed by decoding
        for sid in rd[1][1:]:
            if sid != route[-1]:
                route.append(sid)
        if cur_pt.segment_id != route[-1]:
            route.append(cur_pt.segment_id)
    return MatchedPath(points=points, route_segments=route)


# ---------------------------------------------------------------------------
# CSV interfaces (see README): traces are `t,x,y`, matches add segment/arclength

def load_trace(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "t,x,y":
        raise ValueError("trace CSV must start with header 't,x,y'")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise ValueError(f"bad trace row: {ln!r}")
        rows.append([float(p) for p in parts])
    return np.asarray(rows, dtype=float)


def save_trace(trace) -> str:
    out = ["t,x,y"]
    for t, x, y in np.asarray(trace, dtype=float):
        out.append(f"{float(t)!r},{float(x)!r},{float(y)!r}")
    return "\n".join(out) + "\n"


def save_matched(mp: MatchedPath) -> str:
    out = ["t,segment_id,arclength,x,y"]
    for p in mp.points:
        out.append(f"{p.t!r},{p.segment_id},{p.arclength!r},{p.point.x!r},{p.point.y!r}")
    return "\n".join(out) + "\n"


def load_matched(text: str) -> MatchedPath:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "t,segment_id,arclength,x,y":
        raise ValueError("matched CSV must start with header 't,segment_id,arclength,x,y'")
    points = []
    for ln in lines[1:]:
        t, sid, s, x, y = ln.split(",")
        points.append(MatchedPoint(t=float(t), segment_id=int(sid),
                                   arclength=float(s),
                                   point=GeoPoint(float(x), float(y))))
    route = []
    for p in points:
        if not route or p.segment_id != route[-1]:
            route.append(p.segment_id)
    return MatchedPath(points=points, route_segments=route)
