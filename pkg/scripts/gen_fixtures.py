#!/usr/bin/env python3
"""Regenerate the committed fixtures under fixtures/.

Outputs are canonical and committed; tests compare against them byte-exactly.
Run from the repo root: python3 scripts/gen_fixtures.py
"""
import pathlib
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from mapdrive import geom, road_graph as rg  # noqa: E402

OUT = ROOT / "fixtures"


def seg(sid, polyline, endpoints, **attrs):
    return dict(id=sid, polyline=np.asarray(polyline, dtype=float),
                endpoints=endpoints, **attrs)


def tee():
    return rg.graph_from_segments([
        seg(1, [[0, -80], [0, 0]], (1, 0)),
        seg(2, [[0, 0], [80, 0]], (0, 2)),
        seg(3, [[0, 0], [-80, 0]], (0, 3)),
    ], events=[("yield_sign", 1, 72.0)], meta={"name": "tee"})


def cross():
    return rg.graph_from_segments([
        seg(1, [[0, 0], [0, -100]], (0, 1)),
        seg(2, [[0, 0], [100, 0]], (0, 2)),
        seg(3, [[0, 0], [0, 100]], (0, 3)),
        seg(4, [[0, 0], [-100, 0]], (0, 4)),
    ], events=[("traffic_light", 1, 8.0), ("pedestrian_crossing", 1, 15.0)],
        meta={"name": "cross"})


def parallel():
    return rg.graph_from_segments([
        seg(1, [[10, 0], [10, 200]], (1, 2)),
        seg(2, [[0, 0], [0, 200]], (3, 4)),
    ], meta={"name": "parallel"})


def arc100():
    """Quarter arc of radius 100 joined to two straight approaches."""
    # fine chords: curvature estimates on the arc stay within 1% of 1/R
    a = geom.arc_points((0.0, 0.0), 100.0, -90.0, 0.0, step_m=0.5)
    return rg.graph_from_segments([
        seg(1, [[-60, -100], [0, -100]], (1, 2), speed_limit=80.0),
        seg(2, a, (2, 3), speed_limit=80.0),
        seg(3, [[100, 0], [100, 60]], (3, 4), speed_limit=80.0),
    ], meta={"name": "arc100"})


def twenty():
    """20-segment jittered grid for query-oracle tests."""
    rng = np.random.default_rng(2024)
    rows, cols, pitch = 3, 5, 120.0
    nodes = {}
    for r in range(rows):
        for c in range(cols):
            jitter = rng.uniform(-12, 12, 2)
            nodes[(r, c)] = np.array([c * pitch, r * pitch]) + jitter
    specs = []
    sid = 1

    def nid(rc):
        return rc[0] * 10 + rc[1]

    edges = []
    for r in range(rows):
        for c in range(cols - 1):
            edges.append(((r, c), (r, c + 1)))
    for r in range(rows - 1):
        for c in range(cols):
            edges.append(((r, c), (r + 1, c)))
    # drop two edges to land exactly on 20 while keeping the grid connected
    edges.remove(((0, 3), (0, 4)))
    edges.remove(((1, 4), (2, 4)))
    for a, b in edges:
        pa, pb = nodes[a], nodes[b]
        mid = (pa + pb) / 2 + rng.uniform(-8, 8, 2)
        specs.append(seg(sid, [pa, mid, pb], (nid(a), nid(b)),
                         speed_limit=float(rng.choice([30.0, 50.0, 80.0]))))
        sid += 1
    return rg.graph_from_segments(specs, meta={"name": "twenty"})


def write_graphs():
    (OUT / "graphs").mkdir(parents=True, exist_ok=True)
    for name, g in [("tee", tee()), ("cross", cross()), ("parallel", parallel()),
                    ("arc100", arc100()), ("twenty", twenty())]:
        path = OUT / "graphs" / f"{name}.json"
        path.write_text(rg.save_graph(g))
        print("wrote", path)


def write_town():
    from mapdrive.sim_world import build_world, WorldSpec, save_world
    world = build_world(seed=0, spec=WorldSpec())
    path = OUT / "graphs" / "town.json"
    path.write_text(rg.save_graph(world.graph))
    (OUT / "town_world.json").write_text(save_world(world))
    print("wrote", path)


def write_renders():
    from mapdrive import map_render as mr
    (OUT / "renders").mkdir(parents=True, exist_ok=True)
    g = cross()
    route = rg.Route.from_segments(g, [1, 4], start_node=1)
    pos = route.offset_of(1, 60.0)   # 60 m south of the junction, heading north
    raster = mr.render(g, route, pos, heading=0.0)
    (OUT / "renders" / "cross_turn.ppm").write_bytes(mr.to_ppm(raster))
    for i, name in enumerate(["road", "future", "past"]):
        (OUT / "renders" / f"cross_turn_{name}.pgm").write_bytes(
            mr.to_pgm(raster, i))
    s = rg.graph_from_segments(
        [seg(1, [[0, -300], [0, 300]], (1, 2))], meta={"name": "vertical"})
    route_s = rg.Route.from_segments(s, [1])
    raster_s = mr.render(s, route_s, route_s.offset_of(1, 300.0), heading=0.0)
    (OUT / "renders" / "straight_north.ppm").write_bytes(mr.to_ppm(raster_s))
    print("wrote renders")


def write_feature_golden():
    import json
    from mapdrive import semantic_features as sf
    g = rg.load_graph((OUT / "graphs" / "cross.json").read_text())
    route = rg.Route.from_segments(g, [1, 4], start_node=1)
    vec = sf.feature_vector(g, route, route.offset_of(1, 60.0))
    flat = sf.flat_vector(vec)
    (OUT / "features").mkdir(parents=True, exist_ok=True)
    (OUT / "features" / "cross_p1.json").write_text(
        json.dumps({"structured": sf.to_dict(vec), "flat": list(map(float, flat))},
                   indent=2, sort_keys=True) + "\n")
    print("wrote feature golden")


if __name__ == "__main__":
    targets = sys.argv[1:] or ["graphs"]
    if "graphs" in targets:
        write_graphs()
    if "town" in targets:
        write_town()
    if "renders" in targets:
        write_renders()
    if "features" in targets:
        write_feature_golden()
