import sys
import time
import numpy as np

import mapdrive.benchmark as bm
from mapdrive import evaluation as ev

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = bm.BenchmarkConfig(seed=seed)
t0 = time.time()
world = bm.benchmark_world()
train_logs, test_logs = bm.generate_logs(cfg, world)
print(f"data {time.time()-t0:.0f} s", flush=True)
for name, group in (("train", train_logs), ("test", test_logs)):
    f80 = np.mean([np.mean([r["speed_limit"] == 80 for r in lg.feature_rows])
                   for lg in group])
    near = np.mean([np.mean([r["d_traffic_light"] < 80 for r in lg.feature_rows])
                    for lg in group])
    stopped = np.mean([np.mean(lg.actions[:, 1] < 5) for lg in group])
    print(f"{name}: frac80 {f80:.2f} near_light {near:.2f} stopped {stopped:.2f}")

models = {}
for variant in ("bd", "m", "am"):
    t0 = time.time()
    models[variant] = bm.train_variant(cfg, train_logs, variant)
    r = ev.evaluate_model(models[variant], test_logs, model_name=variant)
    full = r["subsets"]["full"]
    near = r["subsets"].get("near_traffic_light_80m")
    print(f"{variant}: {time.time()-t0:.0f} s a_v {full['a_v']:.2f} "
          f"tol_near {near['tolerance_accuracy']:.1f} (n={near['count']}) "
          f"H {r['human_likeness']:.1f}", flush=True)
