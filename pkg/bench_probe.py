import sys
import time
import numpy as np

import mapdrive.sim_world as sw
import mapdrive.driving_models as dm
import mapdrive.human_like as hl
from mapdrive import evaluation as ev

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
t_all = time.time()

world = sw.build_world(100)
n_train, n_test = 8, 4
dur = 60.0
logs = []
t0 = time.time()
for i in range(n_train + n_test):
    rng = np.random.default_rng([seed, 40 + i])
    logs.append(sw.simulate_episode(world, sw.default_style(rng),
                                    seed=int(np.random.default_rng([seed, 70 + i]).integers(1 << 31)),
                                    duration=dur, miss_rate=0.5))
train_logs, test_logs = logs[:n_train], logs[n_train:]
print(f"data: {time.time()-t0:.0f} s", flush=True)

def imit(variant, steps, lr=3e-4):
    model = dm.build_model(dm.ModelConfig(variant=variant), seed=seed)
    t0 = time.time()
    dm.train_imitation(model, train_logs, epochs=3, steps_per_epoch=steps,
                       batch_size=16, n=1, seed=seed, lr=lr)
    print(f"train {variant}: {time.time()-t0:.0f} s", flush=True)
    return model

bd = imit("bd", 150)
m = imit("m", 150)
am = imit("am", 150)

reports = {}
for name, model in (("bd", bd), ("m", m), ("am", am)):
    t0 = time.time()
    reports[name] = ev.evaluate_model(model, test_logs, model_name=name)
    print(f"eval {name}: {time.time()-t0:.0f} s", flush=True)

for name in ("bd", "m", "am"):
    r = reports[name]
    full = r["subsets"]["full"]
    near = r["subsets"].get("near_traffic_light_80m")
    print(name, "a_v", round(full["a_v"], 2), "a_delta", round(full["a_delta"], 2),
          "tol_full", round(full["tolerance_accuracy"], 1),
          "tol_near_light", round(near["tolerance_accuracy"], 1) if near else None,
          "count_near", near["count"] if near else 0,
          "H", round(r["human_likeness"], 1), flush=True)

# Trend C arms: fine-tune from m with lam 0 vs lam 0.5
n_adv = 3
for lam in (0.0, 0.5):
    pol = m.clone()
    cfg = hl.AdvTrainConfig(lam=lam, n=n_adv, batch_size=16, epochs=2,
                            steps_per_epoch=100, seed=seed + 1, lr=1e-4,
                            ratio=1, disc_lr=1e-3)
    t0 = time.time()
    hist = hl.train_adversarial(pol, hl.build_discriminator(n_adv, seed=seed),
                                train_logs, cfg)
    r = ev.evaluate_model(pol, test_logs, model_name=f"lam{lam}")
    print(f"lam={lam}: ft {time.time()-t0:.0f} s, H {r['human_likeness']:.1f}, "
          f"a_v {r['subsets']['full']['a_v']:.2f}, "
          f"disc_acc last {hist[-1]['disc_acc']:.2f}", flush=True)

print(f"total: {time.time()-t_all:.0f} s")
