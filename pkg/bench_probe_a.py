import sys
import time
import numpy as np

import mapdrive.sim_world as sw
import mapdrive.driving_models as dm
from mapdrive import evaluation as ev

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 300
lr = float(sys.argv[3]) if len(sys.argv) > 3 else 5e-4

world = sw.build_world(100)
lims = sorted(set(s.speed_limit for s in world.graph.segments.values()))
print("speed limits in world:", lims)
logs = []
for i in range(12):
    rng = np.random.default_rng([seed, 40 + i])
    ep_seed = int(np.random.default_rng([seed, 70 + i]).integers(1 << 31))
    logs.append(sw.simulate_episode(world, sw.default_style(rng),
                                    seed=ep_seed, duration=60.0,
                                    miss_rate=0.5))
train_logs, test_logs = logs[:8], logs[8:]

for variant in ("bd", "m"):
    model = dm.build_model(dm.ModelConfig(variant=variant), seed=seed)
    t0 = time.time()
    hist = dm.train_imitation(model, train_logs, epochs=3,
                              steps_per_epoch=steps, batch_size=16, n=1,
                              seed=seed, lr=lr)
    r = ev.evaluate_model(model, test_logs, model_name=variant)
    full = r["subsets"]["full"]
    near = r["subsets"].get("near_traffic_light_80m")
    last = np.mean([h["imit_loss"] for h in hist[-50:]])
    print(f"{variant}: {time.time()-t0:.0f} s loss {last:.4f} "
          f"a_v {full['a_v']:.2f} a_delta {full['a_delta']:.1f} "
          f"tol {full['tolerance_accuracy']:.1f} "
          f"tol_near {near['tolerance_accuracy']:.1f} H {r['human_likeness']:.1f}",
          flush=True)
