import numpy as np
import pytest

from mapdrive import road_graph as rg

FIXTURES = __import__("pathlib").Path(__file__).resolve().parent.parent / "fixtures"


def seg(sid, polyline, endpoints, **attrs):
    return dict(id=sid, polyline=np.asarray(polyline, dtype=float),
                endpoints=endpoints, **attrs)


def straight_graph(length=100.0, **attrs):
    """Single straight segment north from the origin."""
    return rg.graph_from_segments(
        [seg(1, [[0, 0], [0, length]], (10, 11), **attrs)])


def cross_graph(arm=100.0):
    """4-way right-angle cross at the origin; ids: south 1, east 2, north 3, west 4.

    All polylines point away from the center node 0. The south arm carries a
    traffic light and a pedestrian crossing, mirroring fixtures/graphs/cross.json.
    """
    return rg.graph_from_segments([
        seg(1, [[0, 0], [0, -arm]], (0, 1)),
        seg(2, [[0, 0], [arm, 0]], (0, 2)),
        seg(3, [[0, 0], [0, arm]], (0, 3)),
        seg(4, [[0, 0], [-arm, 0]], (0, 4)),
    ], events=[("traffic_light", 1, 8.0), ("pedestrian_crossing", 1, 15.0)])


def tee_graph(arm=80.0):
    """T-junction: stem from the south (1), arms east (2) and west (3)."""
    return rg.graph_from_segments([
        seg(1, [[0, -arm], [0, 0]], (1, 0)),
        seg(2, [[0, 0], [arm, 0]], (0, 2)),
        seg(3, [[0, 0], [-arm, 0]], (0, 3)),
    ])


def parallel_graph(gap=10.0, length=200.0):
    """Two parallel north-bound segments, id 1 at x=gap, id 2 at x=0."""
    return rg.graph_from_segments([
        seg(1, [[gap, 0], [gap, length]], (1, 2)),
        seg(2, [[0, 0], [0, length]], (3, 4)),
    ])


def lshape_graph():
    """Two-segment L: 100 m north then 80 m east, joined at node 1."""
    return rg.graph_from_segments([
        seg(1, [[0, 0], [0, 100]], (0, 1)),
        seg(2, [[0, 100], [80, 100]], (1, 2)),
    ])


@pytest.fixture
def cross():
    return cross_graph()


@pytest.fixture
def tee():
    return tee_graph()
