"""Synthetic road worlds and scripted "human" driving logs.

A world is a jittered street grid (default 50 km/h) plus one winding 80 km/h
loop road, populated with traffic lights, pedestrian crossings, yield signs,
and a few shuttling background vehicles. Episodes integrate a kinematic
bicycle model under a pure-pursuit-plus-rules driver and record every
observation stream the models consume. Everything is a pure function of
(inputs, seed).
"""
from __future__ import annotations

import dataclasses
import json
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import geom, map_render as mr, semantic_features as sf
from . import road_graph as rg

# ego-view raster frame: 40 m x 40 m forward window, 64 x 64 px
EGO_SIZE = 64
EGO_EXTENT_M = 40.0
EGO_PX_PER_M = EGO_SIZE / EGO_EXTENT_M
EGO_ROW = 56          # ego sits low in the frame: 35 m ahead, 5 m behind
EGO_COL = 32

MASK_CLASSES = 19     # Cityscapes-style class slots
CLASS_ROAD = 0
CLASS_LIGHT = 6
CLASS_SIGN = 7
CLASS_PERSON = 11
CLASS_CAR = 13

LIGHT_GREEN_S = 20.0
LIGHT_AMBER_S = 5.0
LIGHT_RED_S = 15.0
LIGHT_CYCLE_S = LIGHT_GREEN_S + LIGHT_AMBER_S + LIGHT_RED_S

WHEELBASE_M = 2.7
STEER_RATIO = 16.0    # steering wheel deg : road wheel deg
MAX_STEER_DEG = 720.0
STEER_SLEW_DEG_S = 900.0
ACCEL_MPS2 = 1.8
LAT_ACCEL_MPS2 = 2.2
STOP_GAP_M = 3.0
CORRIDOR_M = 5.0

VEHICLE_LEN_M = 4.5
VEHICLE_WID_M = 2.0


class WorldSpecError(ValueError):
    pass


class SimulationDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    rows: int = 3
    cols: int = 3
    block_m: float = 200.0
    jitter_m: float = 10.0
    curve_radius_m: float = 60.0
    density: float = 1.0
    n_vehicles: int = 3

    def validate(self):
        if self.density <= 0:
            raise WorldSpecError("density must be > 0")
        if self.rows < 3 or self.cols < 3:
            raise WorldSpecError(
                "grid needs at least 3x3 nodes to contain a 4-way intersection")
        if self.block_m < 120:
            raise WorldSpecError("blocks below 120 m leave no room for events")
        if not (30.0 <= self.curve_radius_m <= 99.0):
            raise WorldSpecError(
                "curve radius must lie in [30, 99] m so curvature filters trigger")
        if self.jitter_m < 0 or self.jitter_m > self.block_m / 8:
            raise WorldSpecError("jitter must lie in [0, block/8]")


@dataclass(frozen=True)
class DriverStyle:
    speed_fraction: float = 0.95   # target speed as fraction of the limit
    braking: float = 1.0           # scales comfort/max deceleration
    reaction_delay: float = 0.2    # seconds of signal latency
    noise_scale: float = 1.0       # scales smooth actuation noise

    def validate(self):
        if not (0.0 < self.speed_fraction <= 1.2):
            raise ValueError("speed_fraction must lie in (0, 1.2]")
        if not (0.2 <= self.braking <= 3.0):
            raise ValueError("braking must lie in [0.2, 3]")
        if not (0.0 <= self.reaction_delay <= 1.0):
            raise ValueError("reaction_delay must lie in [0, 1] s")
        if not (0.0 <= self.noise_scale <= 3.0):
            raise ValueError("noise_scale must lie in [0, 3]")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float   # degrees, 0 = +y, counter-clockwise positive
    v: float         # km/h
    delta: float     # steering-wheel degrees

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be non-negative")
        if abs(self.delta) > MAX_STEER_DEG:
            raise ValueError(f"|steering| must stay within {MAX_STEER_DEG} deg")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Light:
    segment_id: int
    arclength: float
    phase_offset: float


@dataclass(frozen=True)
class Crossing:
    segment_id: int
    arclength: float
    period: float
    occupied_s: float
    phase_offset: float


@dataclass(frozen=True)
class ScriptedVehicle:
    segment_id: int
    speed_mps: float
    phase: float
    lo: float
    hi: float


@dataclass
class World:
    graph: rg.RoadGraph
    lights: list[Light]
    crossings: list[Crossing]
    vehicles: list[ScriptedVehicle]
    spec: WorldSpec
    seed: int

    def light_state(self, i: int, t: float) -> str:
        ph = (t + self.lights[i].phase_offset) % LIGHT_CYCLE_S
        if ph < LIGHT_GREEN_S:
            return "green"
        if ph < LIGHT_GREEN_S + LIGHT_AMBER_S:
            return "amber"
        return "red"

    def crossing_occupied(self, i: int, t: float) -> bool:
        c = self.crossings[i]
        return (t + c.phase_offset) % c.period < c.occupied_s

    def crossing_walker(self, i: int, t: float):
        """Pedestrian position while the crossing is occupied, else None.

        The walker moves straight across the road over the occupied window.
        """
        c = self.crossings[i]
        ph = (t + c.phase_offset) % c.period
        if ph >= c.occupied_s:
            return None
        seg = self.graph.segments[c.segment_id]
        p = seg.point_at(c.arclength)
        tang = geom.tangent_at(seg.polyline, seg.cums, c.arclength)
        right = np.array([tang[1], -tang[0]])
        span = seg.width + 2.0
        frac = ph / c.occupied_s
        return p + right * (frac - 0.5) * span

    def light_position(self, i: int) -> np.ndarray:
        l = self.lights[i]
        return self.graph.segments[l.segment_id].point_at(l.arclength)

    def crossing_position(self, i: int) -> np.ndarray:
        c = self.crossings[i]
        return self.graph.segments[c.segment_id].point_at(c.arclength)

    def vehicle_pose(self, i: int, t: float):
        """(position, heading) of a shuttling background vehicle."""
        v = self.vehicles[i]
        seg = self.graph.segments[v.segment_id]
        span = v.hi - v.lo
        u = (v.speed_mps * t + v.phase) % (2.0 * span)
        forward = u <= span
        s = v.lo + (u if forward else 2.0 * span - u)
        p = seg.point_at(s)
        tang = geom.tangent_at(seg.polyline, seg.cums, s)
        h = geom.heading_of(tang if forward else -tang)
        return p, h


# --- world generation -----------------------------------------------------------

def _arc_from(start, heading_deg, radius, turn_deg, step_m=2.0):
    """Arc polyline leaving `start` along `heading_deg`; turn > 0 bends left.

    Returns (points, end_heading).
    """
    side = 90.0 if turn_deg > 0 else -90.0
    center = np.asarray(start, float) + radius * geom.heading_to_unit(
        heading_deg + side)
    a0 = math.degrees(math.atan2(start[1] - center[1], start[0] - center[0]))
    pts = geom.arc_points(center, radius, a0, a0 + turn_deg, step_m)
    return pts, geom.normalize_heading(heading_deg + turn_deg)


def _connected(nodes, edges) -> bool:
    if not edges:
        return len(nodes) <= 1
    adj = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {next(iter(nodes))}
    stack = [next(iter(nodes))]
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(nodes)


def build_world(seed: int, spec: WorldSpec | None = None) -> World:
    """Deterministic world for a seed: street grid + winding loop + schedules."""
    spec = spec or WorldSpec()
    spec.validate()
    rng = np.random.default_rng([int(seed), 101])

    def nid(r, c):
        return r * 100 + c

    pos = {}
    for r in range(spec.rows):
        for c in range(spec.cols):
            jit = rng.uniform(-spec.jitter_m, spec.jitter_m, 2)
            pos[nid(r, c)] = np.array([c * spec.block_m, r * spec.block_m]) + jit

    center = nid(spec.rows // 2, spec.cols // 2)
    edges = []
    for r in range(spec.rows):
        for c in range(spec.cols - 1):
            edges.append((nid(r, c), nid(r, c + 1)))
    for r in range(spec.rows - 1):
        for c in range(spec.cols):
            edges.append((nid(r, c), nid(r + 1, c)))

    # density < 1 drops optional edges while keeping the grid connected
    optional = [e for e in edges if center not in e]
    n_drop = int(round((1.0 - min(spec.density, 1.0)) * len(optional)))
    drop_order = list(rng.permutation(len(optional)))
    dropped = 0
    nodes_all = set(pos)
    for j in drop_order:
        if dropped >= n_drop:
            break
        e = optional[j]
        trial = [x for x in edges if x != e]
        if _connected(nodes_all, trial):
            edges = trial
            dropped += 1

    specs = []
    sid = 1
    for a, b in edges:
        pa, pb = pos[a], pos[b]
        mid = (pa + pb) / 2 + rng.uniform(-spec.jitter_m, spec.jitter_m, 2)
        specs.append(dict(id=sid, polyline=np.array([pa, mid, pb]),
                          endpoints=(a, b), speed_limit=50.0))
        sid += 1

    # winding 80 km/h loop from the top-right corner back to the bottom-right
    tr = nid(spec.rows - 1, spec.cols - 1)
    br = nid(0, spec.cols - 1)
    rad = spec.curve_radius_m
    p, h = pos[tr].copy(), -90.0   # leave the grid heading east
    parts = []
    for turn in (90.0, -90.0, -90.0):
        arc, h = _arc_from(p, h, rad, turn)
        parts.append(arc if not parts else arc[1:])
        p = arc[-1]
    down_x = p[0]
    fillet_y = pos[br][1] + 40.0
    parts.append(np.array([[down_x, fillet_y]]))
    arc, h = _arc_from(np.array([down_x, fillet_y]), 180.0, 40.0, -90.0)
    parts.append(arc[1:])
    parts.append(pos[br][None, :])
    branch = np.vstack(parts)
    branch_id = sid
    specs.append(dict(id=branch_id, polyline=branch, endpoints=(tr, br),
                      speed_limit=80.0))

    graph = rg.graph_from_segments(
        specs, meta={"name": f"town-{seed}", "seed": int(seed)})

    # events: lights + crossings guard the 4-way; a yield guards another node
    def near_node_arclength(segment, node, dist):
        s = graph.segments[segment]
        return dist if s.endpoints[0] == node else s.length - dist

    center_segs = sorted(graph.intersections[center].incident_segments)
    light_segs = [center_segs[k] for k in rng.choice(len(center_segs), 2,
                                                     replace=False)]
    lights, crossings = [], []
    events = []
    for s in sorted(light_segs):
        a_l = near_node_arclength(s, center, 12.0)
        a_c = near_node_arclength(s, center, 18.0)
        lights.append(Light(s, a_l, float(rng.uniform(0, LIGHT_CYCLE_S))))
        crossings.append(Crossing(s, a_c, float(rng.uniform(16, 24)),
                                  float(rng.uniform(4, 7)),
                                  float(rng.uniform(0, 24))))
        events.append(("traffic_light", s, a_l))
        events.append(("pedestrian_crossing", s, a_c))

    # one standalone mid-block crossing away from the center
    standalone = [s for s in sorted(graph.segments)
                  if s not in light_segs and s != branch_id]
    s_mid = standalone[int(rng.integers(0, len(standalone)))]
    a_mid = graph.segments[s_mid].length * float(rng.uniform(0.4, 0.6))
    crossings.append(Crossing(s_mid, a_mid, float(rng.uniform(16, 24)),
                              float(rng.uniform(4, 7)), float(rng.uniform(0, 24))))
    events.append(("pedestrian_crossing", s_mid, a_mid))

    # yield signs on two approaches of a neighboring junction
    other = nid(spec.rows // 2, spec.cols // 2 - 1)
    other_segs = sorted(graph.intersections[other].incident_segments)
    for s in other_segs[:2]:
        a_y = near_node_arclength(s, other, 10.0)
        events.append(("yield_sign", s, a_y))

    graph = rg.graph_from_segments(specs, events=events,
                                   meta={"name": f"town-{seed}",
                                         "seed": int(seed)})

    vehicles = []
    veh_segs = rng.choice(standalone, size=min(spec.n_vehicles, len(standalone)),
                          replace=False)
    for s in sorted(int(x) for x in veh_segs):
        length = graph.segments[s].length
        vehicles.append(ScriptedVehicle(
            s, float(rng.uniform(4.0, 8.0)),
            float(rng.uniform(0, 2 * length)), 5.0, length - 5.0))

    world = World(graph, lights, crossings, vehicles, spec, int(seed))
    _check_required_elements(world)
    return world


def _check_required_elements(world: World):
    g = world.graph
    missing = []
    if not any(e.kind == "traffic_light" for e in g.events):
        missing.append("traffic light")
    if not any(e.kind == "pedestrian_crossing" for e in g.events):
        missing.append("pedestrian crossing")
    if not any(e.kind == "yield_sign" for e in g.events):
        missing.append("yield sign")
    if not any(len(n.incident_segments) >= 4 for n in g.intersections.values()):
        missing.append("4-way intersection")
    if not any(s.speed_limit >= 80.0 for s in g.segments.values()):
        missing.append("fast winding road")
    if missing:
        raise WorldSpecError("spec too small to place required elements: "
                             + ", ".join(missing))


# --- world persistence ------------------------------------------------------------

def save_world(world: World) -> str:
    doc = {
        "seed": world.seed,
        "spec": dataclasses.asdict(world.spec),
        "graph": json.loads(rg.save_graph(world.graph)),
        "lights": [dataclasses.asdict(l) for l in world.lights],
        "crossings": [dataclasses.asdict(c) for c in world.crossings],
        "vehicles": [dataclasses.asdict(v) for v in world.vehicles],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_world(text: str) -> World:
    doc = json.loads(text)
    return World(
        graph=rg.load_graph(json.dumps(doc["graph"])),
        lights=[Light(**d) for d in doc["lights"]],
        crossings=[Crossing(**d) for d in doc["crossings"]],
        vehicles=[ScriptedVehicle(**d) for d in doc["vehicles"]],
        spec=WorldSpec(**doc["spec"]),
        seed=int(doc["seed"]),
    )


# --- gps corruption ----------------------------------------------------------------

def corrupt_gps(trace: np.ndarray, sigma: float, seed) -> np.ndarray:
    """Add i.i.d. Gaussian position noise to a (T, 3) [t, x, y] trace."""
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 2 or trace.shape[1] != 3:
        raise ValueError(f"trace must be (T, 3) [t, x, y], got {trace.shape}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = trace.copy()
    if sigma > 0:
        rng = np.random.default_rng(seed)
        out[:, 1:3] += rng.normal(0.0, sigma, (len(trace), 2))
    return out


# --- ego-frame rendering -------------------------------------------------------------

def _ego_rowcol(points, state: VehicleState) -> np.ndarray:
    u = geom.heading_to_unit(state.heading)
    r = np.array([u[1], -u[0]])
    d = np.asarray(points, float) - state.position
    rows = EGO_ROW - d @ u * EGO_PX_PER_M
    cols = EGO_COL + d @ r * EGO_PX_PER_M
    return np.stack([rows, cols], axis=1)


def _stamp_blob(img: np.ndarray, rc, half_px: int, value: float):
    r = int(math.floor(rc[0] + 0.5))
    c = int(math.floor(rc[1] + 0.5))
    r0, r1 = max(r - half_px, 0), min(r + half_px, img.shape[0] - 1)
    c0, c1 = max(c - half_px, 0), min(c + half_px, img.shape[1] - 1)
    if r0 > r1 or c0 > c1:
        return
    img[r0:r1 + 1, c0:c1 + 1] = np.maximum(img[r0:r1 + 1, c0:c1 + 1], value)


def _stamp_rect(img: np.ndarray, state: VehicleState, center, heading: float,
                length: float, width: float, value: float):
    u = geom.heading_to_unit(heading)
    r = np.array([u[1], -u[0]])
    c = np.asarray(center, float)
    half_l, half_w = length / 2.0, width / 2.0
    corners = np.array([c + u * half_l + r * half_w, c + u * half_l - r * half_w,
                        c - u * half_l - r * half_w, c - u * half_l + r * half_w])
    mask = np.zeros(img.shape, dtype=bool)
    mr._fill_quad(mask, _ego_rowcol(corners, state))
    np.maximum(img, mask * value, out=img)


def _road_mask(state: VehicleState, g: rg.RoadGraph) -> np.ndarray:
    road = np.zeros((EGO_SIZE, EGO_SIZE), dtype=bool)
    for sid in sorted(g.segments):
        seg = g.segments[sid]
        pts = _ego_rowcol(seg.polyline, state)
        mr._stroke_polyline(road, pts, seg.width * EGO_PX_PER_M)
    return road


def ego_raster(state: VehicleState, world: World, t: float) -> np.ndarray:
    """Forward-facing (4, 64, 64) view: road, stop objects, vehicles, light state.

    Channel 3 encodes each visible light's current state as green 1/3,
    amber 2/3, red 1. Pedestrians are deliberately absent here; they are only
    observable through the confidence masks.
    """
    out = np.zeros((4, EGO_SIZE, EGO_SIZE))
    out[0] = _road_mask(state, world.graph)
    g = world.graph
    for ev in g.events:
        p = g.segments[ev.segment_id].point_at(ev.arclength)
        _stamp_blob(out[1], _ego_rowcol([p], state)[0], 1, 1.0)
    for i in range(len(world.vehicles)):
        p, h = world.vehicle_pose(i, t)
        _stamp_rect(out[2], state, p, h, VEHICLE_LEN_M, VEHICLE_WID_M, 1.0)
    state_value = {"green": 1.0 / 3.0, "amber": 2.0 / 3.0, "red": 1.0}
    for i in range(len(world.lights)):
        _stamp_blob(out[3], _ego_rowcol([world.light_position(i)], state)[0], 1,
                    state_value[world.light_state(i, t)])
    return out


def oracle_masks(state: VehicleState, world: World, t: float,
                 miss_rate: float, blur: float, seed) -> np.ndarray:
    """(19, 64, 64) class-confidence masks in the ego frame.

    Stands in for a pretrained segmentation net: class channels are road 0,
    traffic light 6, traffic sign 7, person 11, car 13; the rest stay zero.
    With probability miss_rate a present non-road class is attenuated to a
    peak confidence in (0, 0.2] instead of being removed.
    """
    if not (0.0 <= miss_rate <= 1.0) or not (0.0 <= blur <= 1.0):
        raise ValueError("miss_rate and blur must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    conf = rng.uniform(0.92, 1.0, MASK_CLASSES)
    m = np.zeros((MASK_CLASSES, EGO_SIZE, EGO_SIZE))
    m[CLASS_ROAD] = _road_mask(state, world.graph) * conf[CLASS_ROAD]
    g = world.graph
    for i in range(len(world.lights)):
        _stamp_blob(m[CLASS_LIGHT], _ego_rowcol([world.light_position(i)],
                                                state)[0], 1, conf[CLASS_LIGHT])
    for ev in g.events:
        if ev.kind == "yield_sign":
            p = g.segments[ev.segment_id].point_at(ev.arclength)
            _stamp_blob(m[CLASS_SIGN], _ego_rowcol([p], state)[0], 1,
                        conf[CLASS_SIGN])
    for i in range(len(world.crossings)):
        w = world.crossing_walker(i, t)
        if w is not None:
            _stamp_blob(m[CLASS_PERSON], _ego_rowcol([w], state)[0], 1,
                        conf[CLASS_PERSON])
    for i in range(len(world.vehicles)):
        p, h = world.vehicle_pose(i, t)
        _stamp_rect(m[CLASS_CAR], state, p, h, VEHICLE_LEN_M, VEHICLE_WID_M,
                    conf[CLASS_CAR])
    for i in range(MASK_CLASSES):
        if i == CLASS_ROAD or m[i].max() <= 0.0:
            continue
        if rng.uniform() < miss_rate:
            target = rng.uniform(0.02, 0.2)
            m[i] *= target / m[i].max()
    if blur > 0.0:
        m = (1.0 - blur) * m + blur * _box3(m)
    return m


def _box3(m: np.ndarray) -> np.ndarray:
    """3x3 box filter with zero padding, per channel."""
    p = np.pad(m, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(m)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            out += p[:, dr:dr + m.shape[1], dc:dc + m.shape[2]]
    return out / 9.0


# --- driver ---------------------------------------------------------------------------

def bicycle_step(state: VehicleState, delta: float, v: float,
                 dt: float) -> VehicleState:
    """Kinematic bicycle update; steering-wheel angle maps 16:1 to the wheels."""
    wheel = math.radians(delta / STEER_RATIO)
    v_mps = v / 3.6
    yaw_rate = math.degrees(v_mps / WHEELBASE_M * math.tan(wheel))
    mid_heading = state.heading + 0.5 * yaw_rate * dt
    u = geom.heading_to_unit(mid_heading)
    return VehicleState(
        x=state.x + u[0] * v_mps * dt,
        y=state.y + u[1] * v_mps * dt,
        heading=geom.normalize_heading(state.heading + yaw_rate * dt),
        v=v, delta=delta)


def route_event_table(world: World, route: rg.Route):
    """Lights and crossings that lie on the route, as sorted
    (route_offset, kind, world_index) rows."""
    rows = []
    on_route = {leg.segment_id for leg in route.legs}
    for i, l in enumerate(world.lights):
        if l.segment_id in on_route:
            rows.append((route.offset_of(l.segment_id, l.arclength), "light", i))
    for i, c in enumerate(world.crossings):
        if c.segment_id in on_route:
            rows.append((route.offset_of(c.segment_id, c.arclength),
                         "crossing", i))
    return sorted(rows)


def human_controller(state: VehicleState, world: World, route: rg.Route,
                     s_route: float, style: DriverStyle, t: float,
                     dt: float = 0.1, noise=(0.0, 0.0), events=None):
    """Scripted driver: pure-pursuit steering plus rule-based speed.

    Returns the commanded (steering-wheel degrees, speed km/h) for this step.
    Signals are sampled at t - reaction_delay; `noise` holds the smooth
    per-step actuation noise.
    """
    if events is None:
        events = route_event_table(world, route)
    v_mps = state.v / 3.6
    ld = float(np.clip(1.0 + 0.6 * v_mps, 4.0, 15.0))
    target = route.point_at(min(s_route + ld, route.length))
    u = geom.heading_to_unit(state.heading)
    r = np.array([u[1], -u[0]])
    rel = target - state.position
    d2 = float(rel @ rel)
    if d2 > 0.25:
        kappa_left = -2.0 * float(rel @ r) / d2
        wheel = math.degrees(math.atan(WHEELBASE_M * kappa_left))
        delta_cmd = wheel * STEER_RATIO + noise[0]
    else:
        delta_cmd = state.delta
    slew = STEER_SLEW_DEG_S * dt
    delta = float(np.clip(delta_cmd, state.delta - slew, state.delta + slew))
    delta = float(np.clip(delta, -MAX_STEER_DEG, MAX_STEER_DEG))

    seg_id, _ = route.position_at(s_route)
    limit = world.graph.segments[seg_id].speed_limit
    v_des = limit * style.speed_fraction

    # slow for curvature ahead of the pose
    for a, b in ((0.0, 10.0), (10.0, 20.0), (20.0, 30.0)):
        if s_route + b > route.length:
            break
        dh = abs(geom.normalize_heading(route.heading_at(s_route + b)
                                        - route.heading_at(s_route + a)))
        kappa = math.radians(dh) / (b - a)
        if kappa > 1e-4:
            v_des = min(v_des, 3.6 * math.sqrt(LAT_ACCEL_MPS2 / kappa))

    # stop for red/amber lights and occupied crossings
    t_sig = max(t - style.reaction_delay, 0.0)
    decel_comf = 2.0 * style.braking
    for off, kind, idx in events:
        d = off - s_route
        if d < -2.0 or d > 130.0:
            continue
        if kind == "light":
            st = world.light_state(idx, t_sig)
            must_stop = st == "red" or (st == "amber" and d > 12.0)
        else:
            must_stop = world.crossing_occupied(idx, t_sig)
        if must_stop:
            d_stop = max(d - STOP_GAP_M, 0.0)
            v_allow = 3.6 * math.sqrt(2.0 * decel_comf * d_stop) \
                if d_stop > 0.3 else 0.0
            v_des = min(v_des, v_allow)

    v_des = max(v_des + noise[1], 0.0)
    decel_max = 3.5 * style.braking
    v = float(np.clip(v_des, state.v - decel_max * 3.6 * dt,
                      state.v + ACCEL_MPS2 * 3.6 * dt))
    return delta, max(v, 0.0)


def random_route(world: World, rng: np.random.Generator,
                 min_length: float) -> rg.Route:
    """Seeded no-repeat walk over the graph until min_length is covered."""
    g = world.graph
    sids = sorted(g.segments)
    for _ in range(300):
        first = int(rng.choice(sids))
        seg = g.segments[first]
        k = int(rng.integers(0, 2))
        start, node = seg.endpoints[k], seg.endpoints[1 - k]
        legs, length = [first], seg.length
        while length < min_length:
            options = [s for s in g.intersections[node].incident_segments
                       if s not in legs]
            if not options:
                break
            nxt = int(rng.choice(sorted(options)))
            legs.append(nxt)
            length += g.segments[nxt].length
            e = g.segments[nxt].endpoints
            node = e[1] if e[0] == node else e[0]
        if length >= min_length:
            return rg.Route.from_segments(g, legs, start_node=start)
    raise WorldSpecError(
        f"could not find a route of length {min_length:.0f} m; world too small")


def default_style(rng: np.random.Generator) -> DriverStyle:
    """Seeded style draw covering the documented ranges."""
    style = DriverStyle(
        speed_fraction=float(rng.uniform(0.82, 1.08)),
        braking=float(rng.uniform(0.75, 1.3)),
        reaction_delay=float(rng.uniform(0.1, 0.4)),
        noise_scale=float(rng.uniform(0.5, 1.8)))
    style.validate()
    return style


# --- episode simulation ------------------------------------------------------------

@dataclass
class DrivingLog:
    """Synchronized per-timestep streams of one simulated episode.

    Raster streams are stored quantized to uint8 (value = round(255 * x));
    use the *_float accessors for model input.
    """
    world: World
    route: rg.Route
    style: DriverStyle
    f: float
    seed: int
    miss_rate: float
    blur: float
    t: np.ndarray             # (T,)
    poses: np.ndarray         # (T, 3) x, y, heading
    actions: np.ndarray       # (T, 2) steering-wheel deg, speed km/h
    offsets: np.ndarray       # (T,) route arclength of the pose
    features: np.ndarray      # (T, 21) flat semantic features
    feature_rows: list        # structured dicts, one per timestep
    ego_u8: np.ndarray        # (T, 4, 64, 64)
    map_u8: np.ndarray        # (T, 3, 64, 64)
    mask_u8: np.ndarray       # (T, 19, 64, 64)

    def __len__(self):
        return len(self.t)

    def ego_float(self, k: int) -> np.ndarray:
        return self.ego_u8[k] / 255.0

    def map_float(self, k: int) -> np.ndarray:
        return self.map_u8[k] / 255.0

    def mask_float(self, k: int) -> np.ndarray:
        return self.mask_u8[k] / 255.0


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def simulate_episode(world: World, style: DriverStyle, seed: int,
                     duration: float = 60.0, f: float = 10.0,
                     route: rg.Route | None = None, miss_rate: float = 0.0,
                     blur: float = 0.0) -> DrivingLog:
    """Integrate one scripted episode and record every observation stream."""
    style.validate()
    T = int(round(duration * f))
    if T < 8:
        raise ValueError("episode too short: need at least 8 frames")
    dt = 1.0 / f
    g = world.graph
    rng = np.random.default_rng([int(seed), 23])
    if route is None:
        vmax = max(s.speed_limit for s in g.segments.values()) \
            * style.speed_fraction / 3.6
        route = random_route(world, rng, min_length=duration * vmax + 60.0)

    white = np.random.default_rng([int(seed), 29]).normal(0.0, 1.0, (T, 2))
    noise = np.zeros((T, 2))
    for k in range(1, T):
        noise[k] = 0.92 * noise[k - 1] + 0.08 * white[k]
    noise[:, 0] *= 6.0 * style.noise_scale
    noise[:, 1] *= 1.2 * style.noise_scale

    events = route_event_table(world, route)
    s = min(15.0, route.length / 4.0)
    p0 = route.point_at(s)
    state = VehicleState(float(p0[0]), float(p0[1]), route.heading_at(s),
                         v=0.0, delta=0.0)

    t_arr = np.arange(T) / f
    poses = np.zeros((T, 3))
    actions = np.zeros((T, 2))
    offsets = np.zeros(T)
    feats = np.zeros((T, sf.flat_vector(sf.feature_vector(g, route, s)).size))
    rows = []
    ego_u8 = np.zeros((T, 4, EGO_SIZE, EGO_SIZE), dtype=np.uint8)
    map_u8 = np.zeros((T, 3, EGO_SIZE, EGO_SIZE), dtype=np.uint8)
    mask_u8 = np.zeros((T, MASK_CLASSES, EGO_SIZE, EGO_SIZE), dtype=np.uint8)

    for k in range(T):
        t = float(t_arr[k])
        s = route.project(state.position, lo=max(s - 8.0, 0.0),
                          hi=min(s + 30.0, route.length))
        lateral = float(np.linalg.norm(state.position - route.point_at(s)))
        if lateral > CORRIDOR_M:
            raise SimulationDivergedError(
                f"vehicle left the route corridor: {lateral:.1f} m lateral "
                f"at t={t:.1f}s (seed {seed})")

        vec = sf.feature_vector(g, route, s)
        feats[k] = sf.flat_vector(vec)
        rows.append(sf.to_dict(vec))
        ego_u8[k] = _quantize(ego_raster(state, world, t))
        map_u8[k] = _quantize(mr.box_downsample(
            mr.render(g, route, s, state.heading), EGO_SIZE))
        mask_u8[k] = _quantize(oracle_masks(state, world, t, miss_rate, blur,
                                            seed=[int(seed), 31, k]))

        delta, v = human_controller(state, world, route, s, style, t, dt,
                                    noise=tuple(noise[k]), events=events)
        poses[k] = (state.x, state.y, state.heading)
        actions[k] = (delta, v)
        offsets[k] = s
        state = bicycle_step(state, delta, v, dt)

    return DrivingLog(world=world, route=route, style=style, f=f,
                      seed=int(seed), miss_rate=miss_rate, blur=blur,
                      t=t_arr, poses=poses, actions=actions, offsets=offsets,
                      features=feats, feature_rows=rows, ego_u8=ego_u8,
                      map_u8=map_u8, mask_u8=mask_u8)


# --- log persistence -----------------------------------------------------------------

FRAME_STREAMS = (("ego", 4), ("map", 3), ("masks", MASK_CLASSES))


def save_log(log: DrivingLog, out_dir) -> pathlib.Path:
    """Persist a DrivingLog as a directory; see docs/log-format.md."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.json").write_text(save_world(log.world))

    meta = {
        "f": log.f,
        "seed": log.seed,
        "miss_rate": log.miss_rate,
        "blur": log.blur,
        "frames": len(log),
        "style": dataclasses.asdict(log.style),
        "route": {"segments": list(log.route.segment_ids),
                  "start_node": log.route.nodes[0]},
        "raster": {"height": EGO_SIZE, "width": EGO_SIZE,
                   "quantization": "uint8, value = round(255 * x)"},
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True)
                                   + "\n")

    acts = ["t,x,y,heading,delta,v,offset"]
    for k in range(len(log)):
        vals = [log.t[k], *log.poses[k], *log.actions[k], log.offsets[k]]
        acts.append(",".join(repr(float(v)) for v in vals))
    (out / "actions.csv").write_text("\n".join(acts) + "\n")

    cols = list(log.feature_rows[0].keys())
    lines = ["t," + ",".join(cols)]
    for k, row in enumerate(log.feature_rows):
        lines.append(repr(float(log.t[k])) + ","
                     + ",".join(repr(float(row[c])) for c in cols))
    (out / "features.csv").write_text("\n".join(lines) + "\n")

    frame_bytes = sum(c for _, c in FRAME_STREAMS) * EGO_SIZE * EGO_SIZE
    idx = {"frames": len(log), "frame_bytes": frame_bytes,
           "height": EGO_SIZE, "width": EGO_SIZE, "dtype": "uint8",
           "order": [{"stream": n, "channels": c} for n, c in FRAME_STREAMS]}
    (out / "rasters.idx.json").write_text(json.dumps(idx, indent=2,
                                                     sort_keys=True) + "\n")
    with open(out / "rasters.bin", "wb") as fh:
        for k in range(len(log)):
            fh.write(log.ego_u8[k].tobytes())
            fh.write(log.map_u8[k].tobytes())
            fh.write(log.mask_u8[k].tobytes())
    return out


def load_log(in_dir) -> DrivingLog:
    src = pathlib.Path(in_dir)
    world = load_world((src / "world.json").read_text())
    meta = json.loads((src / "meta.json").read_text())
    route = rg.Route.from_segments(world.graph, meta["route"]["segments"],
                                   start_node=meta["route"]["start_node"])

    aread = np.loadtxt(src / "actions.csv", delimiter=",", skiprows=1,
                       ndmin=2)
    t = aread[:, 0]
    poses, actions, offsets = aread[:, 1:4], aread[:, 4:6], aread[:, 6]

    flines = (src / "features.csv").read_text().splitlines()
    cols = flines[0].split(",")[1:]
    rows = []
    for line in flines[1:]:
        vals = line.split(",")
        rows.append({c: _feature_value(c, v)
                     for c, v in zip(cols, vals[1:])})
    feats = np.stack([sf.flat_vector(sf.from_dict(r)) for r in rows])

    idx = json.loads((src / "rasters.idx.json").read_text())
    T = idx["frames"]
    raw = np.frombuffer((src / "rasters.bin").read_bytes(), dtype=np.uint8)
    per_frame = idx["frame_bytes"]
    raw = raw.reshape(T, per_frame)
    n_ego = 4 * EGO_SIZE * EGO_SIZE
    n_map = 3 * EGO_SIZE * EGO_SIZE
    ego = raw[:, :n_ego].reshape(T, 4, EGO_SIZE, EGO_SIZE).copy()
    maps = raw[:, n_ego:n_ego + n_map].reshape(T, 3, EGO_SIZE, EGO_SIZE).copy()
    masks = raw[:, n_ego + n_map:].reshape(T, MASK_CLASSES, EGO_SIZE,
                                           EGO_SIZE).copy()

    return DrivingLog(
        world=world, route=route, style=DriverStyle(**meta["style"]),
        f=meta["f"], seed=meta["seed"], miss_rate=meta["miss_rate"],
        blur=meta["blur"], t=t, poses=poses, actions=actions, offsets=offsets,
        features=feats, feature_rows=rows, ego_u8=ego, map_u8=maps,
        mask_u8=masks)


def _feature_value(col: str, text: str):
    if col in ("turn_number", "other_count") or col.startswith("present_"):
        return int(float(text))
    return float(text)
