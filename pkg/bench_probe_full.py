import sys
import time
import numpy as np

import mapdrive.road_graph as rg
import mapdrive.sim_world as sw
import mapdrive.driving_models as dm
import mapdrive.human_like as hl
from mapdrive import evaluation as ev
from collections import deque

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0


def branch_route(world, rng, min_length, max_hops=2):
    g = world.graph
    branch_id = max(g.segments)
    tr, br = g.segments[branch_id].endpoints
    entry = tr if rng.uniform() < 0.5 else br
    prev = {entry: (None, None, 0)}
    q = deque([entry])
    while q:
        node = q.popleft()
        hops = prev[node][2]
        if hops >= max_hops:
            continue
        for sid in sorted(g.intersections[node].incident_segments):
            if sid == branch_id:
                continue
            e = g.segments[sid].endpoints
            nxt = e[1] if e[0] == node else e[0]
            if nxt not in prev:
                prev[nxt] = (node, sid, hops + 1)
                q.append(nxt)
    starts = sorted(n for n in prev if n != entry)
    start = int(starts[rng.integers(0, len(starts))])
    legs = []
    node = start
    while node != entry:
        node, sid, _ = prev[node]
        legs.append(sid)
    legs.append(branch_id)
    route = rg.Route.from_segments(g, legs, start_node=start)
    node = br if entry is tr else tr
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


t_all = time.time()
world = sw.build_world(100)
logs = []
for i in range(12):
    rng = np.random.default_rng([seed, 40 + i])
    ep_seed = int(np.random.default_rng([seed, 70 + i]).integers(1 << 31))
    route = None
    if i % 2 == 1:
        route = branch_route(world, np.random.default_rng([seed, 99, i]), 600.0)
    logs.append(sw.simulate_episode(world, sw.default_style(rng),
                                    seed=ep_seed, duration=60.0,
                                    route=route, miss_rate=0.5))
train_logs, test_logs = logs[:8], logs[8:]
f80 = [np.mean([r["speed_limit"] == 80 for r in lg.feature_rows])
       for lg in test_logs]
print(f"data {time.time()-t_all:.0f} s, test frac80 {[round(x,2) for x in f80]}",
      flush=True)

models = {}
for variant in ("bd", "m", "am"):
    model = dm.build_model(dm.ModelConfig(variant=variant), seed=seed)
    t0 = time.time()
    dm.train_imitation(model, train_logs, epochs=3, steps_per_epoch=300,
                       batch_size=16, n=1, seed=seed, lr=5e-4)
    models[variant] = model
    print(f"train {variant}: {time.time()-t0:.0f} s", flush=True)

for name, model in models.items():
    t0 = time.time()
    r = ev.evaluate_model(model, test_logs, model_name=name)
    full = r["subsets"]["full"]
    near = r["subsets"].get("near_traffic_light_80m")
    print(f"{name}: a_v {full['a_v']:.2f} a_delta {full['a_delta']:.1f} "
          f"tol {full['tolerance_accuracy']:.1f} "
          f"tol_near {near['tolerance_accuracy']:.1f} (n={near['count']}) "
          f"H {r['human_likeness']:.1f} [eval {time.time()-t0:.0f} s]",
          flush=True)

for lam in (0.0, 0.5):
    pol = models["m"].clone()
    cfg = hl.AdvTrainConfig(lam=lam, n=3, batch_size=16, epochs=2,
                            steps_per_epoch=150, seed=seed + 1, lr=1e-4,
                            ratio=3, disc_lr=3e-3)
    t0 = time.time()
    hist = hl.train_adversarial(pol, hl.build_discriminator(3, seed=seed),
                                train_logs, cfg)
    r = ev.evaluate_model(pol, test_logs, model_name=f"lam{lam}")
    print(f"lam={lam}: ft {time.time()-t0:.0f} s H {r['human_likeness']:.1f} "
          f"a_v {r['subsets']['full']['a_v']:.2f} "
          f"disc_acc {hist[-1]['disc_acc']:.2f} "
          f"hum {hist[-1]['hum_loss']:.3f}", flush=True)

print(f"total {time.time()-t_all:.0f} s")
