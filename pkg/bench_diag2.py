"""Cache seed-0 benchmark data + models, then analyze trend B failure."""
import pickle
import sys
import time

import numpy as np

import mapdrive.benchmark as bm
import mapdrive.driving_models as dm
import mapdrive.evaluation as ev
import mapdrive.sim_world as sw

SEED = int(sys.argv[2]) if len(sys.argv) > 2 else 0
DATA = f"/tmp/b{SEED}_data.pkl"
MODELS = f"/tmp/b{SEED}_models.pkl"
stage = sys.argv[1]

if stage == "data":
    cfg = bm.BenchmarkConfig(seed=SEED)
    world = bm.benchmark_world()
    t0 = time.time()
    train, test = bm.generate_logs(cfg, world)
    print(f"data {time.time()-t0:.0f}s")
    with open(DATA, "wb") as f:
        pickle.dump((train, test), f)

elif stage == "train":
    cfg = bm.BenchmarkConfig(seed=SEED)
    with open(DATA, "rb") as f:
        train, test = pickle.load(f)
    models = {}
    for v in dm.VARIANTS:
        t0 = time.time()
        models[v] = bm.train_variant(cfg, train, v)
        print(f"{v}: {time.time()-t0:.0f}s")
    with open(MODELS, "wb") as f:
        pickle.dump(models, f)

elif stage == "analyze":
    with open(DATA, "rb") as f:
        train, test = pickle.load(f)
    with open(MODELS, "rb") as f:
        models = pickle.load(f)

    # per-episode, per-zone tolerance accuracy for m vs am
    pred_m = [ev.model_predictions(models["m"], log) for log in test]
    pred_am = [ev.model_predictions(models["am"], log) for log in test]
    pred_bd = [ev.model_predictions(models["bd"], log) for log in test]
    near = ev.SITUATIONS["near_traffic_light_80m"]

    for li, log in enumerate(test):
        t0m, pm = pred_m[li]
        _, pam = pred_am[li]
        _, pbd = pred_bd[li]
        h = dm.horizon_steps(log.f)
        m = len(pm)
        truth = log.actions[t0m:t0m + m]
        hold = np.array([near.evaluate(ev.scenario_record(log, t0m - h + j))
                         for j in range(m)], dtype=bool)
        # occupied-crossing stop frames: low truth speed near light
        slow = truth[:, 1] < 10.0
        print(f"ep{li} near={hold.sum():3d} slow_near={(hold & slow).sum():3d}"
              f"  tol_near m={ev.tolerance_accuracy(pm[hold], truth[hold]) if hold.any() else -1:.1f}"
              f" am={ev.tolerance_accuracy(pam[hold], truth[hold]) if hold.any() else -1:.1f}"
              f"  a_v full bd={ev.mse_metrics(pbd, truth)[1]:.1f}"
              f" m={ev.mse_metrics(pm, truth)[1]:.1f}")
        if (hold & slow).any():
            i = np.where(hold & slow)[0]
            print(f"   slow frames truth v {truth[i, 1].round(1)}")
            print(f"   m  preds v {pm[i, 1].round(1)}")
            print(f"   am preds v {pam[i, 1].round(1)}")

    # where does the m-vs-bd edge come from on the full log?
    for li, log in enumerate(test):
        t0m, pm = pred_m[li]
        _, pbd = pred_bd[li]
        m = len(pm)
        truth = log.actions[t0m:t0m + m]
        lim = np.array([log.feature_rows[t0m - dm.horizon_steps(log.f) + j]
                        .get("speed_limit", 50.0) for j in range(m)])
        is80 = lim == 80.0
        if is80.any():
            print(f"ep{li} 80-zone n={is80.sum():3d} "
                  f"a_v bd={ev.mse_metrics(pbd[is80], truth[is80])[1]:.1f} "
                  f"m={ev.mse_metrics(pm[is80], truth[is80])[1]:.1f}")
