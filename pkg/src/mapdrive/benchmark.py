"""Standard synthetic benchmark: fixed town, mixed route families, seeds 0-4.

One benchmark seed controls everything downstream of the fixed world:
episode seeds, driver styles, model init, and batch order. Episodes cycle
through three route families so the test distribution exercises the map
features (plain grid streets, the winding 80 km/h loop, and passes through
the signalised center intersection).
"""

import dataclasses
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import driving_models as dm
from . import evaluation as ev
from . import human_like as hl
from . import road_graph as rg
from . import sim_world as sw

WORLD_SEED = 116
TRAIN_FAMILIES = ("branch", "center", "random")
TEST_FAMILIES = ("center", "branch", "center", "random", "branch", "center")


@dataclass(frozen=True)
class BenchmarkConfig:
    seed: int = 0
    n_train: int = 8
    n_test: int = 6
    duration: float = 60.0
    miss_rate: float = 0.5
    epochs: int = 3
    steps_per_epoch: int = 300
    batch_size: int = 16
    lr: float = 5e-4
    adv_n: int = 3
    adv_epochs: int = 2
    adv_steps: int = 150
    adv_lr: float = 1e-4
    adv_ratio: int = 1
    adv_disc_lr: float = 1e-3
    lam: float = 0.5

    def validate(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("need at least one train and one test episode")
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValueError("miss_rate must lie in [0, 1]")
        return self


def _light_node(g: rg.RoadGraph, light: sw.Light) -> int:
    """Intersection the light guards (the segment end it sits near)."""
    seg = g.segments[light.segment_id]
    return seg.endpoints[0] if light.arclength < seg.length / 2 \
        else seg.endpoints[1]


def benchmark_world() -> sw.World:
    """Fixed town with every usable intersection signal-guarded.

    The stock town keeps signals sparse; near-event trends need dense
    exposure, so each remaining center approach and two approaches at every
    free 3-way node get a light at 12 m plus a crossing at 18 m, and all
    signalised crossings run busy pedestrian schedules (roughly half-time
    occupied).
    """
    base = sw.build_world(WORLD_SEED)
    g = base.graph
    rng = np.random.default_rng([WORLD_SEED, 7])
    lights = list(base.lights)
    guarded = {(l.segment_id, _light_node(g, l)) for l in lights}
    center = next(iter(set.intersection(
        *(set(g.segments[l.segment_id].endpoints) for l in lights))))

    yield_nodes = set()
    for evn in g.events:
        if evn.kind == "yield_sign":
            seg = g.segments[evn.segment_id]
            yield_nodes.add(seg.endpoints[0] if evn.arclength < seg.length / 2
                            else seg.endpoints[1])
    branch_corners = set(g.segments[max(g.segments)].endpoints)

    pairs = [(s, center)
             for s in sorted(g.intersections[center].incident_segments)
             if (s, center) not in guarded]
    for node in sorted(g.intersections):
        if node == center or node in yield_nodes or node in branch_corners:
            continue
        if g.degree(node) < 3:
            continue
        segs = sorted(g.intersections[node].incident_segments)
        pick = rng.choice(len(segs), 2, replace=False)
        pairs.extend((segs[k], node) for k in sorted(pick))

    events = list(g.events)
    for s, node in pairs:
        seg = g.segments[s]
        a_l = 12.0 if seg.endpoints[0] == node else seg.length - 12.0
        a_c = 18.0 if seg.endpoints[0] == node else seg.length - 18.0
        lights.append(sw.Light(s, a_l, float(rng.uniform(0, sw.LIGHT_CYCLE_S))))
        events.append(rg.MapEvent("traffic_light", s, a_l))
        events.append(rg.MapEvent("pedestrian_crossing", s, a_c))

    # busy schedules on every signalised crossing, stock ones included
    crossings = []
    for l in lights:
        seg = g.segments[l.segment_id]
        node = _light_node(g, l)
        a_c = 18.0 if seg.endpoints[0] == node else seg.length - 18.0
        period = float(rng.uniform(12, 16))
        crossings.append(sw.Crossing(l.segment_id, a_c, period,
                                     float(rng.uniform(6, 8)),
                                     float(rng.uniform(0, period))))
    have = {(c.segment_id, round(c.arclength, 3)) for c in crossings}
    crossings.extend(c for c in base.crossings
                     if (c.segment_id, round(c.arclength, 3)) not in have)

    events = sorted(events, key=lambda e: (e.segment_id, e.arclength, e.kind))
    graph = dataclasses.replace(g, events=events)
    return sw.World(graph, lights, crossings, base.vehicles, base.spec,
                    base.seed)


def _bfs_tree(g: rg.RoadGraph, root: int, skip_segment=None, max_hops=None):
    """Hop-shortest predecessor tree as {node: (prev_node, via_segment, hops)}."""
    prev = {root: (None, None, 0)}
    q = deque([root])
    while q:
        node = q.popleft()
        hops = prev[node][2]
        if max_hops is not None and hops >= max_hops:
            continue
        for sid in sorted(g.intersections[node].incident_segments):
            if sid == skip_segment:
                continue
            e = g.segments[sid].endpoints
            nxt = e[1] if e[0] == node else e[0]
            if nxt not in prev:
                prev[nxt] = (node, sid, hops + 1)
                q.append(nxt)
    return prev


def _legs_to(prev: dict, start: int):
    legs, node = [], start
    while prev[node][1] is not None:
        node, sid, _ = prev[node]
        legs.append(sid)
    return legs


def _extend(g: rg.RoadGraph, legs: list, start: int, node: int,
            rng: np.random.Generator, min_length: float) -> rg.Route:
    route = rg.Route.from_segments(g, legs, start_node=start)
    while route.length < min_length:
        options = [s for s in sorted(g.intersections[node].incident_segments)
                   if s not in legs]
        if not options:
            break
        sid = int(options[rng.integers(0, len(options))])
        legs.append(sid)
        e = g.segments[sid].endpoints
        node = e[1] if e[0] == node else e[0]
        route = rg.Route.from_segments(g, legs, start_node=start)
    return route


def branch_route(world: sw.World, rng: np.random.Generator,
                 min_length: float = 600.0) -> rg.Route:
    """Short grid approach, then the winding 80 km/h loop."""
    g = world.graph
    branch_id = max(g.segments)        # the loop carries the highest id
    tr, br = g.segments[branch_id].endpoints
    entry = tr if rng.uniform() < 0.5 else br
    exit_node = br if entry == tr else tr
    prev = _bfs_tree(g, entry, skip_segment=branch_id, max_hops=2)
    starts = sorted(n for n in prev if n != entry)
    start = int(starts[rng.integers(0, len(starts))])
    legs = _legs_to(prev, start)
    legs.append(branch_id)
    return _extend(g, legs, start, exit_node, rng, min_length)


def center_route(world: sw.World, rng: np.random.Generator,
                 min_length: float = 500.0) -> rg.Route:
    """Approach the busiest signalised node along a lighted segment, leave."""
    g = world.graph
    by_node = {}
    for l in world.lights:
        by_node.setdefault(_light_node(g, l), []).append(l.segment_id)
    center = max(sorted(by_node), key=lambda n: len(by_node[n]))
    approaches = sorted(set(by_node[center]))
    approach = int(approaches[rng.integers(0, len(approaches))])
    a, b = g.segments[approach].endpoints
    far = b if a == center else a
    prev = _bfs_tree(g, far, skip_segment=approach, max_hops=2)
    starts = sorted(n for n in prev if n != far)
    start = int(starts[rng.integers(0, len(starts))])
    legs = _legs_to(prev, start)
    legs.append(approach)
    return _extend(g, legs, start, center, rng, min_length)


def episode_route(world: sw.World, family: str, rng: np.random.Generator):
    if family == "random":
        return None                  # simulate_episode draws its own
    if family == "branch":
        return branch_route(world, rng)
    if family == "center":
        return center_route(world, rng)
    raise ValueError(f"unknown route family {family!r}")


def generate_logs(cfg: BenchmarkConfig, world: sw.World | None = None):
    """Simulate the benchmark episodes; returns (train_logs, test_logs)."""
    cfg.validate()
    world = world or benchmark_world()
    logs = []
    for i in range(cfg.n_train + cfg.n_test):
        if i < cfg.n_train:
            family = TRAIN_FAMILIES[i % len(TRAIN_FAMILIES)]
        else:
            family = TEST_FAMILIES[(i - cfg.n_train) % len(TEST_FAMILIES)]
        # a rare style/noise draw can corner-cut out of the route corridor;
        # redraw deterministically instead of aborting the whole benchmark
        for attempt in range(5):
            style = sw.default_style(
                np.random.default_rng([cfg.seed, 40 + i, attempt]))
            ep_seed = int(np.random.default_rng([cfg.seed, 70 + i, attempt])
                          .integers(1 << 31))
            route = episode_route(
                world, family, np.random.default_rng([cfg.seed, 99, i, attempt]))
            try:
                logs.append(sw.simulate_episode(
                    world, style, seed=ep_seed, duration=cfg.duration,
                    route=route, miss_rate=cfg.miss_rate))
                break
            except sw.SimulationDivergedError:
                if attempt == 4:
                    raise
    return logs[:cfg.n_train], logs[cfg.n_train:]


def train_variant(cfg: BenchmarkConfig, train_logs, variant: str,
                  n: int = 1) -> dm.DrivingModel:
    model = dm.build_model(dm.ModelConfig(variant=variant), seed=cfg.seed)
    dm.train_imitation(model, train_logs, epochs=cfg.epochs,
                       steps_per_epoch=cfg.steps_per_epoch,
                       batch_size=cfg.batch_size, n=n, seed=cfg.seed,
                       lr=cfg.lr)
    return model


def finetune_adversarial(cfg: BenchmarkConfig, policy: dm.DrivingModel,
                         train_logs, lam: float) -> dm.DrivingModel:
    pol = policy.clone()
    disc = hl.build_discriminator(cfg.adv_n, seed=cfg.seed)
    adv = hl.AdvTrainConfig(lam=lam, n=cfg.adv_n, batch_size=cfg.batch_size,
                            epochs=cfg.adv_epochs,
                            steps_per_epoch=cfg.adv_steps,
                            seed=cfg.seed + 1, lr=cfg.adv_lr,
                            ratio=cfg.adv_ratio, disc_lr=cfg.adv_disc_lr)
    hl.train_adversarial(pol, disc, train_logs, adv)
    return pol


def trend_a(cfg: BenchmarkConfig, data=None) -> dict:
    """Full-log mean A_v for the map variant vs the baseline."""
    train_logs, test_logs = data or generate_logs(cfg)
    out = {}
    for variant in ("bd", "m"):
        model = train_variant(cfg, train_logs, variant)
        report = ev.evaluate_model(model, test_logs, model_name=variant)
        out[variant] = report["subsets"]["full"]["a_v"]
    return out


def trend_b(cfg: BenchmarkConfig, data=None, m_model=None) -> dict:
    """Tolerance accuracy within 80 m of traffic lights, am vs m."""
    train_logs, test_logs = data or generate_logs(cfg)
    out = {}
    for variant, model in (("m", m_model), ("am", None)):
        model = model or train_variant(cfg, train_logs, variant)
        report = ev.evaluate_model(model, test_logs, model_name=variant)
        sub = report["subsets"].get("near_traffic_light_80m")
        out[variant] = sub["tolerance_accuracy"] if sub else float("nan")
    return out


def trend_c(cfg: BenchmarkConfig, data=None, m_model=None) -> dict:
    """Human-likeness H for lambda = cfg.lam vs lambda = 0 fine-tuning."""
    train_logs, test_logs = data or generate_logs(cfg)
    base = m_model or train_variant(cfg, train_logs, "m")
    out = {}
    for lam in (0.0, cfg.lam):
        pol = finetune_adversarial(cfg, base, train_logs, lam)
        report = ev.evaluate_model(pol, test_logs,
                                   model_name=f"lam{lam:g}")
        out[lam] = report["human_likeness"]
    return out
