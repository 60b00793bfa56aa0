import numpy as np

import mapdrive.sim_world as sw
import mapdrive.driving_models as dm
from mapdrive import evaluation as ev

seed = 0
world = sw.build_world(100)
logs = []
for i in range(12):
    rng = np.random.default_rng([seed, 40 + i])
    ep_seed = int(np.random.default_rng([seed, 70 + i]).integers(1 << 31))
    logs.append(sw.simulate_episode(world, sw.default_style(rng),
                                    seed=ep_seed, duration=60.0,
                                    miss_rate=0.5))
train_logs, test_logs = logs[:8], logs[8:]

for li, log in enumerate(logs):
    lim = np.array([r["speed_limit"] for r in log.feature_rows])
    print(f"log {li}: frac80={np.mean(lim == 80):.2f} "
          f"v mean {log.actions[:, 1].mean():.1f} "
          f"std {log.actions[:, 1].std():.1f}")

models = {}
for variant in ("bd", "m"):
    model = dm.build_model(dm.ModelConfig(variant=variant), seed=seed)
    dm.train_imitation(model, train_logs, epochs=3, steps_per_epoch=300,
                       batch_size=16, n=1, seed=seed, lr=5e-4)
    models[variant] = model

for variant, model in models.items():
    errs, lims, stops = [], [], []
    for log in test_logs:
        t0, preds = ev.model_predictions(model, log)
        truth = log.actions[t0:t0 + len(preds)]
        errs.append((preds[:, 1] - truth[:, 1]) ** 2)
        h = t0 - dm.horizon_steps(log.f)
        rows = log.feature_rows
        lims.append(np.array([rows[h + j]["speed_limit"]
                              for j in range(len(preds))]))
        stops.append(truth[:, 1] < 10.0)
    errs = np.concatenate(errs)
    lims = np.concatenate(lims)
    stops = np.concatenate(stops)
    print(f"{variant}: a_v full {errs.mean():.2f} | on50 {errs[lims == 50].mean():.2f} "
          f"| on80 {errs[lims == 80].mean():.2f} (n={np.sum(lims == 80)}) "
          f"| slow-frames {errs[stops].mean():.2f} (n={stops.sum()}) "
          f"| cruise {errs[~stops].mean():.2f}")
