"""Local planar road network: segments, intersections, point events, routes.

Graphs are small (desk scale), loaded from a canonical JSON form documented in
docs/graph-schema.md. All ids are integers; all tie-breaks are by ascending id.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import geom

EVENT_KINDS = ("traffic_light", "pedestrian_crossing", "yield_sign")

_GRID_CELL = 50.0  # meters; spatial hash cell for nearest-segment queries


class GraphError(Exception):
    pass


class GraphFormatError(GraphError):
    """Structural/parse problem in a serialized graph."""


class GraphIntegrityError(GraphError):
    """Referential or geometric invariant violated; carries all problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RouteError(GraphError):
    pass


class PositionNotOnRouteError(RouteError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(eq=False)
class RoadSegment:
    id: int
    polyline: np.ndarray          # (N, 2) meters, N >= 2
    speed_limit: float            # km/h, [0, 120]
    free_flow_speed: float        # km/h
    width: float                  # meters
    endpoints: tuple[int, int]    # intersection ids at polyline[0] / polyline[-1]

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=float)
        self.endpoints = (int(self.endpoints[0]), int(self.endpoints[1]))

    @cached_property
    def cums(self) -> np.ndarray:
        return geom.cumulative_lengths(self.polyline)

    @property
    def length(self) -> float:
        return float(self.cums[-1])

    def point_at(self, s: float) -> np.ndarray:
        return geom.point_at(self.polyline, self.cums, s)

    def __eq__(self, other):
        return (isinstance(other, RoadSegment)
                and self.id == other.id
                and np.array_equal(self.polyline, other.polyline)
                and self.speed_limit == other.speed_limit
                and self.free_flow_speed == other.free_flow_speed
                and self.width == other.width
                and self.endpoints == other.endpoints)


@dataclass(eq=False)
class Intersection:
    id: int
    position: np.ndarray          # (2,)
    incident_segments: tuple[int, ...]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.incident_segments = tuple(int(s) for s in self.incident_segments)

    def __eq__(self, other):
        return (isinstance(other, Intersection)
                and self.id == other.id
                and np.array_equal(self.position, other.position)
                and self.incident_segments == other.incident_segments)


@dataclass(frozen=True)
class MapEvent:
    kind: str                     # one of EVENT_KINDS
    segment_id: int
    arclength: float              # meters along the segment polyline


@dataclass(eq=False)
class RoadGraph:
    segments: dict[int, RoadSegment]
    intersections: dict[int, Intersection]
    events: list[MapEvent]
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        return (isinstance(other, RoadGraph)
                and self.segments == other.segments
                and self.intersections == other.intersections
                and self.events == other.events
                and self.meta == other.meta)

    def degree(self, node_id: int) -> int:
        return len(self.intersections[node_id].incident_segments)

    def events_on(self, segment_id: int, kind: str | None = None) -> list[MapEvent]:
        return [e for e in self.events
                if e.segment_id == segment_id and (kind is None or e.kind == kind)]

    def validate(self) -> None:
        problems = []
        for sid, seg in self.segments.items():
            if sid != seg.id:
                problems.append(f"segment key {sid} != id {seg.id}")
            if seg.polyline.ndim != 2 or seg.polyline.shape[0] < 2 or seg.polyline.shape[1] != 2:
                problems.append(f"segment {sid}: polyline must be (N>=2, 2)")
                continue
            if not np.all(np.isfinite(seg.polyline)):
                problems.append(f"segment {sid}: non-finite polyline coordinate")
            if np.any(np.linalg.norm(np.diff(seg.polyline, axis=0), axis=1) == 0):
                problems.append(f"segment {sid}: repeated consecutive polyline point")
            if not (0.0 <= seg.speed_limit <= 120.0):
                problems.append(f"segment {sid}: speed_limit {seg.speed_limit} outside [0, 120]")
            if seg.free_flow_speed < 0:
                problems.append(f"segment {sid}: negative free_flow_speed")
            if seg.width <= 0:
                problems.append(f"segment {sid}: non-positive width")
            for k, nid in enumerate(seg.endpoints):
                node = self.intersections.get(nid)
                if node is None:
                    problems.append(f"segment {sid}: dangling endpoint node {nid}")
                    continue
                end = seg.polyline[0] if k == 0 else seg.polyline[-1]
                if np.linalg.norm(end - node.position) > 1e-6:
                    problems.append(
                        f"segment {sid}: polyline end {k} not at node {nid} position")
                if sid not in node.incident_segments:
                    problems.append(f"node {nid}: missing incidence of segment {sid}")
        for nid, node in self.intersections.items():
            if nid != node.id:
                problems.append(f"intersection key {nid} != id {node.id}")
            if len(node.incident_segments) < 1:
                problems.append(f"node {nid}: no incident segments")
            for sid in node.incident_segments:
                seg = self.segments.get(sid)
                if seg is None:
                    problems.append(f"node {nid}: dangling incident segment {sid}")
                elif nid not in seg.endpoints:
                    problems.append(f"node {nid}: segment {sid} does not end here")
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                problems.append(f"event kind {ev.kind!r} unknown")
            seg = self.segments.get(ev.segment_id)
            if seg is None:
                problems.append(f"event on dangling segment {ev.segment_id}")
            elif not (-1e-9 <= ev.arclength <= seg.length + 1e-9):
                problems.append(
                    f"event arclength {ev.arclength} outside segment {ev.segment_id}")
        if problems:
            raise GraphIntegrityError(problems)

    @cached_property
    def _grid(self) -> dict[tuple[int, int], list[int]]:
        cells: dict[tuple[int, int], list[int]] = {}
        for sid in sorted(self.segments):
            pl = self.segments[sid].polyline
            lo = np.floor(pl.min(axis=0) / _GRID_CELL).astype(int)
            hi = np.floor(pl.max(axis=0) / _GRID_CELL).astype(int)
            for cx in range(lo[0], hi[0] + 1):
                for cy in range(lo[1], hi[1] + 1):
                    cells.setdefault((cx, cy), []).append(sid)
        return cells


# ---------------------------------------------------------------------------
# serialization (canonical form; see docs/graph-schema.md)

def _require(cond: bool, msg: str):
    if not cond:
        raise GraphFormatError(msg)


def load_graph(text: str) -> RoadGraph:
    """Parse a graph from its canonical JSON text and validate it."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphFormatError(
            f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    _require(isinstance(obj, dict), "top level must be an object")
    unknown = set(obj) - {"segments", "intersections", "events", "meta"}
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")
    _require("segments" in obj and "intersections" in obj,
             "missing required keys 'segments'/'intersections'")

    segments: dict[int, RoadSegment] = {}
    for rec in obj["segments"]:
        _require(isinstance(rec, dict) and "id" in rec and "polyline" in rec
                 and "endpoints" in rec, "segment record needs id/polyline/endpoints")
        sid = int(rec["id"])
        _require(sid not in segments, f"duplicate segment id {sid}")
        limit = float(rec.get("speed_limit", 50.0))
        segments[sid] = RoadSegment(
            id=sid,
            polyline=np.asarray(rec["polyline"], dtype=float),
            speed_limit=limit,
            free_flow_speed=float(rec.get("free_flow_speed", limit)),
            width=float(rec.get("width", 6.0)),
            endpoints=(int(rec["endpoints"][0]), int(rec["endpoints"][1])),
        )
    intersections: dict[int, Intersection] = {}
    for rec in obj["intersections"]:
        _require(isinstance(rec, dict) and "id" in rec and "position" in rec
                 and "incident_segments" in rec,
                 "intersection record needs id/position/incident_segments")
        nid = int(rec["id"])
        _require(nid not in intersections, f"duplicate intersection id {nid}")
        intersections[nid] = Intersection(
            id=nid,
            position=np.asarray(rec["position"], dtype=float),
            incident_segments=tuple(sorted(int(s) for s in rec["incident_segments"])),
        )
    events = []
    for rec in obj.get("events", []):
        _require(isinstance(rec, dict) and "kind" in rec and "segment_id" in rec
                 and "arclength" in rec, "event record needs kind/segment_id/arclength")
        events.append(MapEvent(kind=str(rec["kind"]),
                               segment_id=int(rec["segment_id"]),
                               arclength=float(rec["arclength"])))
    g = RoadGraph(segments=segments, intersections=intersections,
                  events=sorted(events, key=lambda e: (e.segment_id, e.arclength, e.kind)),
                  meta=dict(obj.get("meta", {})))
    g.validate()
    return g


def save_graph(g: RoadGraph) -> str:
    """Serialize to the canonical JSON text (stable key and record order)."""
    obj = {
        "meta": g.meta,
        "segments": [
            {
                "id": seg.id,
                "polyline": [[float(x), float(y)] for x, y in seg.polyline],
                "speed_limit": float(seg.speed_limit),
                "free_flow_speed": float(seg.free_flow_speed),
                "width": float(seg.width),
                "endpoints": list(seg.endpoints),
            }
            for _, seg in sorted(g.segments.items())
        ],
        "intersections": [
            {
                "id": node.id,
                "position": [float(node.position[0]), float(node.position[1])],
                "incident_segments": sorted(node.incident_segments),
            }
            for _, node in sorted(g.intersections.items())
        ],
        "events": [
            {"kind": e.kind, "segment_id": e.segment_id, "arclength": float(e.arclength)}
            for e in sorted(g.events, key=lambda e: (e.segment_id, e.arclength, e.kind))
        ],
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def graph_from_segments(seg_specs, events=(), meta=None) -> RoadGraph:
    """Build a validated graph from segment spec dicts.

    Each spec needs id/polyline/endpoints; speed_limit (default 50),
    free_flow_speed (default speed_limit) and width (default 6) are optional.
    Intersections are derived from polyline ends.
    """
    segments: dict[int, RoadSegment] = {}
    nodes: dict[int, tuple[np.ndarray, set[int]]] = {}
    for sp in seg_specs:
        limit = float(sp.get("speed_limit", 50.0))
        seg = RoadSegment(
            id=int(sp["id"]),
            polyline=np.asarray(sp["polyline"], dtype=float),
            speed_limit=limit,
            free_flow_speed=float(sp.get("free_flow_speed", limit)),
            width=float(sp.get("width", 6.0)),
            endpoints=(int(sp["endpoints"][0]), int(sp["endpoints"][1])),
        )
        if seg.id in segments:
            raise GraphIntegrityError([f"duplicate segment id {seg.id}"])
        segments[seg.id] = seg
        for k, nid in enumerate(seg.endpoints):
            pos = seg.polyline[0] if k == 0 else seg.polyline[-1]
            if nid not in nodes:
                nodes[nid] = (np.asarray(pos, dtype=float), set())
            nodes[nid][1].add(seg.id)
    intersections = {
        nid: Intersection(id=nid, position=pos, incident_segments=tuple(sorted(sids)))
        for nid, (pos, sids) in nodes.items()
    }
    g = RoadGraph(segments=segments, intersections=intersections,
                  events=sorted((MapEvent(*e) if not isinstance(e, MapEvent) else e
                                 for e in events),
                                key=lambda e: (e.segment_id, e.arclength, e.kind)),
                  meta=dict(meta or {}))
    g.validate()
    return g


# ---------------------------------------------------------------------------
# queries

def nearest_segments(g: RoadGraph, p, radius: float):
    """Segments whose polyline comes within radius of p.

    Returns [(segment_id, GeoPoint projection, arclength, distance), ...]
    sorted by (distance, segment_id). Uses a uniform spatial hash; correctness
    is radius-exact regardless of cell size.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = np.asarray(p, dtype=float)
    lo = np.floor((p - radius) / _GRID_CELL).astype(int)
    hi = np.floor((p + radius) / _GRID_CELL).astype(int)
    cand: set[int] = set()
    for cx in range(lo[0], hi[0] + 1):
        for cy in range(lo[1], hi[1] + 1):
            cand.update(g._grid.get((cx, cy), ()))
    out = []
    for sid in sorted(cand):
        s, q, d = geom.project_to_polyline(g.segments[sid].polyline, p)
        if d <= radius:
            out.append((sid, GeoPoint(float(q[0]), float(q[1])), s, d))
    out.sort(key=lambda r: (r[3], r[0]))
    return out


def exits_at_intersection(g: RoadGraph, node_id: int, entry_heading: float,
                          entry_segment_id: int):
    """Exit options at an intersection, excluding the entry segment.

    Each exit is (segment_id, relative_heading in [-180, 180)) where the
    heading is the segment's outgoing polyline direction relative to
    entry_heading. Ordered by descending relative heading (the sweep starting
    counter-clockwise of straight-ahead), ties by ascending id.
    """
    node = g.intersections[node_id]
    if len(node.incident_segments) < 2:
        raise GraphError(f"node {node_id} has fewer than 2 incident segments")
    if entry_segment_id not in node.incident_segments:
        raise GraphError(f"segment {entry_segment_id} is not incident to node {node_id}")
    rows = []
    for sid in sorted(node.incident_segments):
        if sid == entry_segment_id:
            continue
        seg = g.segments[sid]
        if seg.endpoints[0] == node_id:
            d = seg.polyline[1] - seg.polyline[0]
        else:
            d = seg.polyline[-2] - seg.polyline[-1]
        rel = geom.normalize_heading(geom.heading_of(d) - entry_heading)
        rows.append((sid, rel))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


# ---------------------------------------------------------------------------
# routes

@dataclass(frozen=True)
class RouteLeg:
    segment_id: int
    forward: bool      # True: traversed polyline[0] -> polyline[-1]
    offset: float      # route arclength where this leg starts
    length: float

    @property
    def end_offset(self) -> float:
        return self.offset + self.length


class Route:
    """An ordered, direction-resolved traversal of adjacent segments.

    Segments may not repeat. Provides along-route arclength geometry used by
    feature extraction, rendering and simulation.
    """

    def __init__(self, graph: RoadGraph, legs: list[RouteLeg],
                 nodes: list[int]):
        # nodes has len(legs) + 1 entries: entry node of leg 0, then the node
        # after each leg.
        self.graph = graph
        self.legs = legs
        self.nodes = nodes
        self._by_segment = {leg.segment_id: leg for leg in legs}
        pts = []
        for leg in legs:
            pl = graph.segments[leg.segment_id].polyline
            pl = pl if leg.forward else pl[::-1]
            pts.append(pl if not pts else pl[1:])
        self.polyline = np.concatenate(pts, axis=0)
        self.cums = geom.cumulative_lengths(self.polyline)

    @classmethod
    def from_segments(cls, graph: RoadGraph, segment_ids,
                      start_node: int | None = None) -> "Route":
        ids = [int(s) for s in segment_ids]
        if not ids:
            raise RouteError("empty route")
        if len(set(ids)) != len(ids):
            raise RouteError("route repeats a segment")
        for sid in ids:
            if sid not in graph.segments:
                raise RouteError(f"unknown segment {sid}")
        first = graph.segments[ids[0]]
        if len(ids) == 1:
            forward = not (start_node is not None and start_node == first.endpoints[1])
        else:
            nxt = set(graph.segments[ids[1]].endpoints)
            if first.endpoints[1] in nxt:
                forward = True
            elif first.endpoints[0] in nxt:
                forward = False
            else:
                raise RouteError(f"segments {ids[0]} and {ids[1]} are not adjacent")
            if start_node is not None:
                entry = first.endpoints[0] if forward else first.endpoints[1]
                if entry != start_node:
                    raise RouteError("start_node does not match route direction")
        legs = []
        offset = 0.0
        seg = first
        entry_node = seg.endpoints[0] if forward else seg.endpoints[1]
        nodes = [entry_node]
        cur = seg.endpoints[1] if forward else seg.endpoints[0]
        legs.append(RouteLeg(ids[0], forward, offset, seg.length))
        nodes.append(cur)
        offset += seg.length
        for sid in ids[1:]:
            seg = graph.segments[sid]
            if seg.endpoints[0] == cur:
                fwd = True
            elif seg.endpoints[1] == cur:
                fwd = False
            else:
                raise RouteError(f"segment {sid} does not touch node {cur}")
            legs.append(RouteLeg(sid, fwd, offset, seg.length))
            cur = seg.endpoints[1] if fwd else seg.endpoints[0]
            nodes.append(cur)
            offset += seg.length
        return cls(graph, legs, nodes)

    @property
    def segment_ids(self) -> list[int]:
        return [leg.segment_id for leg in self.legs]

    @property
    def length(self) -> float:
        return float(self.cums[-1])

    def offset_of(self, segment_id: int, arclength: float) -> float:
        """Route arclength of a (segment, on-segment arclength) position."""
        leg = self._by_segment.get(int(segment_id))
        if leg is None:
            raise PositionNotOnRouteError(f"segment {segment_id} not on route")
        if not (-1e-9 <= arclength <= leg.length + 1e-9):
            raise PositionNotOnRouteError(
                f"arclength {arclength} outside segment {segment_id}")
        arclength = min(max(arclength, 0.0), leg.length)
        return leg.offset + (arclength if leg.forward else leg.length - arclength)

    def position_at(self, offset: float) -> tuple[int, float]:
        """Inverse of offset_of: (segment_id, arclength) at a route offset."""
        if not (-1e-9 <= offset <= self.length + 1e-9):
            raise PositionNotOnRouteError(f"offset {offset} outside route")
        offset = min(max(offset, 0.0), self.length)
        leg = self.legs[-1]
        for cand in self.legs:
            if offset < cand.end_offset:
                leg = cand
                break
        local = offset - leg.offset
        return leg.segment_id, (local if leg.forward else leg.length - local)

    def leg_index_at(self, offset: float) -> int:
        for i, leg in enumerate(self.legs):
            if offset < leg.end_offset:
                return i
        return len(self.legs) - 1

    def point_at(self, offset: float) -> np.ndarray:
        return geom.point_at(self.polyline, self.cums, offset)

    def tangent_at(self, offset: float) -> np.ndarray:
        return geom.tangent_at(self.polyline, self.cums, offset)

    def heading_at(self, offset: float) -> float:
        return geom.heading_of(self.tangent_at(offset))

    def project(self, p, lo: float = 0.0, hi: float | None = None) -> float:
        """Route offset of the point on the route closest to p, searched on
        [lo, hi] (whole route by default)."""
        hi = self.length if hi is None else hi
        i0 = max(0, int(np.searchsorted(self.cums, lo, side="right")) - 1)
        i1 = min(len(self.polyline) - 2,
                 int(np.searchsorted(self.cums, hi, side="right")) - 1)
        sub = self.polyline[i0:i1 + 2]
        s, _, _ = geom.project_to_polyline(sub, p)
        return float(min(max(self.cums[i0] + s, lo), hi))


def route_distance(route: Route, a: tuple[int, float], b: tuple[int, float]) -> float:
    """Signed along-route arclength from position a to position b.

    Positions are (segment_id, arclength) pairs on the route. Positive when b
    is ahead of a in travel direction; additive over ordered positions.
    """
    return route.offset_of(*b) - route.offset_of(*a)
