"""Trend C recipe scan on cached seed-0 data/models."""
import pickle
import sys
import time

import numpy as np

import mapdrive.benchmark as bm
import mapdrive.driving_models as dm
import mapdrive.evaluation as ev
import mapdrive.human_like as hl

with open("/tmp/b0_data.pkl", "rb") as f:
    train, test = pickle.load(f)
with open("/tmp/b0_models.pkl", "rb") as f:
    models = pickle.load(f)
base = models["m"]

def run(lam, ratio, disc_lr, lr, n=8, epochs=2, steps=150):
    pol = base.clone()
    disc = hl.build_discriminator(n, seed=0)
    cfg = hl.AdvTrainConfig(lam=lam, n=n, batch_size=16, epochs=epochs,
                            steps_per_epoch=steps, seed=1, lr=lr,
                            ratio=ratio, disc_lr=disc_lr)
    hist = hl.train_adversarial(pol, disc, train, cfg)
    rep = ev.evaluate_model(pol, test, model_name=f"lam{lam}")
    acc = hist[-1]["disc_acc"]
    return rep["human_likeness"], acc

print(f"base H {ev.evaluate_model(base, test)['human_likeness']:.1f}")
for ratio, disc_lr, lr in [(1, 1e-3, 1e-4), (2, 3e-3, 1e-4),
                           (2, 1e-3, 5e-5)]:
    t0 = time.time()
    h0, _ = run(0.0, ratio, disc_lr, lr)
    h1, acc = run(0.5, ratio, disc_lr, lr)
    print(f"n8 ratio {ratio} disc_lr {disc_lr:g} lr {lr:g}: "
          f"H0 {h0:.1f} H1 {h1:.1f} diff {h1-h0:+.1f} disc_acc {acc:.2f} "
          f"({time.time()-t0:.0f}s)", flush=True)
