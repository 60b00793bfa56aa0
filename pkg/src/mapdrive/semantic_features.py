"""Semantic features describing the mapped route ahead of a pose.

All features are computed from the road graph and the route, relative to the
travel direction, so they are invariant under rigid motions of the world.
Distances are meters capped at 250 with presence flags, speeds km/h,
headings degrees in [-180, 180), curvature 1/m. The flat projection is a
fixed 21-wide float vector documented in docs/feature-layout.md.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .road_graph import RoadGraph, Route, exits_at_intersection

DISTANCE_CAP = 250.0
CURVATURE_LOOKAHEAD = 30.0
CURVATURE_SPACING = 5.0
FUTURE_OFFSETS = (1.0, 5.0, 10.0, 20.0, 50.0)
MAX_OTHER_ROADS = 6
MIN_INTERSECTION_DEGREE = 3   # degree-2 nodes are geometry joints, not junctions


@dataclass(frozen=True)
class SemanticFeatureVector:
    d_intersection: float
    present_intersection: bool
    d_traffic_light: float
    present_traffic_light: bool
    d_ped_crossing: float
    present_ped_crossing: bool
    d_yield: float
    present_yield: bool
    speed_limit: float
    free_flow_speed: float
    curvature: float
    turn_number: int
    our_road_heading: float
    other_roads_headings: tuple[float, ...]
    future_headings: tuple[float, float, float, float, float]


def distance_to_next_event(g: RoadGraph, route: Route, offset: float,
                           kind: str) -> tuple[float, bool]:
    """Along-route distance to the next event of `kind` strictly ahead.

    Returns (distance, present); (250.0, False) when none within the cap.
    An event exactly at the current offset is ignored.
    """
    best = None
    for leg in route.legs:
        for ev in g.events_on(leg.segment_id, kind):
            ev_off = leg.offset + (ev.arclength if leg.forward
                                   else leg.length - ev.arclength)
            if ev_off > offset and (best is None or ev_off < best):
                best = ev_off
    if best is None or best - offset > DISTANCE_CAP:
        return DISTANCE_CAP, False
    return best - offset, True


def next_intersection(g: RoadGraph, route: Route, offset: float):
    """First real junction (degree >= 3) strictly ahead on the route.

    Returns (node_id, distance, entry_leg_index) or None.
    """
    for i, leg in enumerate(route.legs):
        node = route.nodes[i + 1]
        if leg.end_offset > offset and g.degree(node) >= MIN_INTERSECTION_DEGREE:
            return node, leg.end_offset - offset, i
    return None


def turn_info(g: RoadGraph, route: Route, offset: float):
    """(turn_number, our_road_heading, other_roads_headings) at the next junction.

    turn_number is the 1-based position of the route's exit in the junction's
    exit ordering; 0 with zeroed headings when no junction lies ahead or the
    route ends at it.
    """
    ni = next_intersection(g, route, offset)
    if ni is None:
        return 0, 0.0, ()
    node, _, i = ni
    if i + 1 >= len(route.legs):
        return 0, 0.0, ()
    entry_leg = route.legs[i]
    seg = g.segments[entry_leg.segment_id]
    pl = seg.polyline if entry_leg.forward else seg.polyline[::-1]
    entry_heading = geom.heading_of(pl[-1] - pl[-2])
    exits = exits_at_intersection(g, node, entry_heading, entry_leg.segment_id)
    exit_sid = route.legs[i + 1].segment_id
    turn_number = next(k for k, (sid, _) in enumerate(exits, start=1)
                       if sid == exit_sid)
    our = exits[turn_number - 1][1]
    others = tuple(h for sid, h in exits if sid != exit_sid)[:MAX_OTHER_ROADS]
    return turn_number, our, others


def curvature_at(route: Route, offset: float,
                 lookahead: float = CURVATURE_LOOKAHEAD,
                 spacing: float = CURVATURE_SPACING) -> float:
    """Mean point-triple (Menger) curvature over resampled route points ahead."""
    end = min(offset + lookahead, route.length)
    ss = np.arange(offset, end + 1e-9, spacing)
    if len(ss) < 3:
        return 0.0
    pts = np.array([route.point_at(s) for s in ss])
    ks = [geom.menger_curvature(pts[j - 1], pts[j], pts[j + 1])
          for j in range(1, len(pts) - 1)]
    return float(np.mean(ks))


def future_headings(route: Route, offset: float) -> tuple[float, ...]:
    """Route tangent headings 1/5/10/20/50 m ahead, relative to the tangent
    at the pose; clamped to the route-end tangent when the route is shorter."""
    h0 = route.heading_at(offset)
    out = []
    for dx in FUTURE_OFFSETS:
        h = route.heading_at(min(offset + dx, route.length))
        out.append(geom.normalize_heading(h - h0))
    return tuple(out)


def feature_vector(g: RoadGraph, route: Route, offset: float) -> SemanticFeatureVector:
    """All semantic features for a route offset (a matched pose)."""
    sid, _ = route.position_at(offset)
    seg = g.segments[sid]
    ni = next_intersection(g, route, offset)
    if ni is None or ni[1] > DISTANCE_CAP:
        d_int, p_int = DISTANCE_CAP, False
    else:
        d_int, p_int = ni[1], True
    d_tl, p_tl = distance_to_next_event(g, route, offset, "traffic_light")
    d_pc, p_pc = distance_to_next_event(g, route, offset, "pedestrian_crossing")
    d_yd, p_yd = distance_to_next_event(g, route, offset, "yield_sign")
    turn, our, others = turn_info(g, route, offset)
    return SemanticFeatureVector(
        d_intersection=d_int, present_intersection=p_int,
        d_traffic_light=d_tl, present_traffic_light=p_tl,
        d_ped_crossing=d_pc, present_ped_crossing=p_pc,
        d_yield=d_yd, present_yield=p_yd,
        speed_limit=seg.speed_limit,
        free_flow_speed=seg.free_flow_speed,
        curvature=curvature_at(route, offset),
        turn_number=turn,
        our_road_heading=our,
        other_roads_headings=others,
        future_headings=future_headings(route, offset),
    )


# ---------------------------------------------------------------------------
# flat projection (width 21) and serialization

FLAT_FEATURE_NAMES = (
    "d_intersection", "d_traffic_light", "d_ped_crossing", "d_yield",
    "present_intersection", "present_traffic_light", "present_ped_crossing",
    "present_yield",
    "speed_limit", "free_flow_speed",
    "curvature",
    "turn_number",
    "our_road_heading",
    "other_headings_mean", "other_headings_min", "other_headings_max",
    "future_heading_1m", "future_heading_5m", "future_heading_10m",
    "future_heading_20m", "future_heading_50m",
)

# index groups for feature-ablation runs
FEATURE_GROUPS = {
    "distances": tuple(range(0, 8)),
    "speeds": (8, 9),
    "curvature": (10,),
    "turn_number": (11,),
    "road_headings": (12, 13, 14, 15),
    "future_headings": tuple(range(16, 21)),
}


def flat_vector(v: SemanticFeatureVector) -> np.ndarray:
    """Normalized fixed-width projection: distances /250, speeds /120,
    headings /180, curvature x100; the other-roads list collapses to
    mean/min/max (zeros when empty)."""
    others = np.asarray(v.other_roads_headings, dtype=float)
    if len(others):
        o_stats = [others.mean() / 180.0, others.min() / 180.0, others.max() / 180.0]
    else:
        o_stats = [0.0, 0.0, 0.0]
    out = np.array([
        v.d_intersection / DISTANCE_CAP,
        v.d_traffic_light / DISTANCE_CAP,
        v.d_ped_crossing / DISTANCE_CAP,
        v.d_yield / DISTANCE_CAP,
        float(v.present_intersection), float(v.present_traffic_light),
        float(v.present_ped_crossing), float(v.present_yield),
        v.speed_limit / 120.0,
        v.free_flow_speed / 120.0,
        v.curvature * 100.0,
        float(v.turn_number),
        v.our_road_heading / 180.0,
        *o_stats,
        *(h / 180.0 for h in v.future_headings),
    ], dtype=float)
    assert out.shape == (len(FLAT_FEATURE_NAMES),)
    return out


def to_dict(v: SemanticFeatureVector) -> dict:
    """JSON/CSV-friendly dict; other-roads headings padded to 6 with a count."""
    d = {
        "d_intersection": v.d_intersection,
        "present_intersection": int(v.present_intersection),
        "d_traffic_light": v.d_traffic_light,
        "present_traffic_light": int(v.present_traffic_light),
        "d_ped_crossing": v.d_ped_crossing,
        "present_ped_crossing": int(v.present_ped_crossing),
        "d_yield": v.d_yield,
        "present_yield": int(v.present_yield),
        "speed_limit": v.speed_limit,
        "free_flow_speed": v.free_flow_speed,
        "curvature": v.curvature,
        "turn_number": v.turn_number,
        "our_road_heading": v.our_road_heading,
        "other_count": len(v.other_roads_headings),
    }
    padded = list(v.other_roads_headings) + [0.0] * (MAX_OTHER_ROADS
                                                     - len(v.other_roads_headings))
    for i, h in enumerate(padded):
        d[f"other_heading_{i}"] = h
    for name, h in zip(("1m", "5m", "10m", "20m", "50m"), v.future_headings):
        d[f"future_heading_{name}"] = h
    return d


def from_dict(d: dict) -> SemanticFeatureVector:
    n = int(d["other_count"])
    return SemanticFeatureVector(
        d_intersection=float(d["d_intersection"]),
        present_intersection=bool(int(d["present_intersection"])),
        d_traffic_light=float(d["d_traffic_light"]),
        present_traffic_light=bool(int(d["present_traffic_light"])),
        d_ped_crossing=float(d["d_ped_crossing"]),
        present_ped_crossing=bool(int(d["present_ped_crossing"])),
        d_yield=float(d["d_yield"]),
        present_yield=bool(int(d["present_yield"])),
        speed_limit=float(d["speed_limit"]),
        free_flow_speed=float(d["free_flow_speed"]),
        curvature=float(d["curvature"]),
        turn_number=int(d["turn_number"]),
        our_road_heading=float(d["our_road_heading"]),
        other_roads_headings=tuple(float(d[f"other_heading_{i}"]) for i in range(n)),
        future_headings=tuple(float(d[f"future_heading_{k}"])
                              for k in ("1m", "5m", "10m", "20m", "50m")),
    )
