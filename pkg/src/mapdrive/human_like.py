"""Drivelet discriminator and adversarial human-likeness training.

A drivelet is a short horizon of predicted actions, N (steering, speed)
pairs flattened to 2N values in real units. A small discriminator learns
to tell logged human drivelets from the policy's, and the policy trains
against the combined objective

    imitation + lambda * (-log D(machine drivelet))

in an alternating min-max loop. The -log D term sends gradients into the
policy only; discriminator parameters are frozen inside it.
"""
import dataclasses

import numpy as np

from . import driving_models as dm
from . import learncore as lc

DISC_WIDTHS = (10, 10, 10)


@dataclasses.dataclass(frozen=True)
class Drivelet:
    """N consecutive (delta_deg, v_kmh) actions flattened to 2N values."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 2 or vals.size % 2:
            raise ValueError(f"drivelet needs 2N flat values, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("drivelet values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size // 2

    @classmethod
    def from_actions(cls, actions) -> "Drivelet":
        arr = np.asarray(actions, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"expected (N, 2) actions, got {arr.shape}")
        return cls(arr.reshape(-1))


@dataclasses.dataclass
class Discriminator:
    """Sigmoid MLP scoring drivelets as human.

    Real-unit inputs are standardized to (x - input_mean) / input_scale
    before the first layer; train_adversarial fits these stats from the
    human drivelets.
    """

    n: int
    params: dict
    input_mean: np.ndarray
    input_scale: np.ndarray


def build_discriminator(n: int, seed: int = 0, input_mean=None,
                        input_scale=None) -> Discriminator:
    if n < 1:
        raise ValueError("drivelet length must be >= 1")
    rng = np.random.default_rng([int(seed), 11])
    widths = (2 * n,) + DISC_WIDTHS + (1,)
    params = {}
    for i in range(len(widths) - 1):
        w, b = lc.init_dense(rng, widths[i], widths[i + 1])
        params[f"d{i}.w"] = w
        params[f"d{i}.b"] = b
    mean = (np.zeros(2 * n) if input_mean is None
            else np.asarray(input_mean, dtype=np.float64))
    scale = (np.tile(dm.ACTION_SCALE, int(n)) if input_scale is None
             else np.asarray(input_scale, dtype=np.float64))
    if mean.shape != (2 * n,) or scale.shape != (2 * n,):
        raise ValueError("input stats must have shape (2N,)")
    if np.any(scale <= 0):
        raise ValueError("input_scale must be positive")
    return Discriminator(int(n), params, mean, scale)


def fit_input_stats(drivelets: np.ndarray):
    """Per-dimension mean and std of a real-unit drivelet pool."""
    x = np.asarray(drivelets, dtype=np.float64)
    if x.ndim != 2 or not len(x):
        raise ValueError(f"need a (M, 2N) drivelet pool, got {x.shape}")
    std = x.std(axis=0)
    return x.mean(axis=0), np.where(std < 1e-6, 1.0, std)


def _as_matrix(disc: Discriminator, drivelets) -> lc.Tensor:
    if isinstance(drivelets, Drivelet):
        x = lc.tensor(drivelets.values[None, :])
    elif isinstance(drivelets, lc.Tensor):
        x = drivelets if drivelets.data.ndim == 2 else lc.reshape(
            drivelets, (1, -1))
    else:
        arr = np.asarray(drivelets, dtype=np.float64)
        x = lc.tensor(np.atleast_2d(arr))
    if x.shape[1] != 2 * disc.n:
        raise ValueError(
            f"drivelet dim {x.shape[1]} does not match 2N = {2 * disc.n}")
    return x


def discriminator_prob(disc: Discriminator, drivelets) -> lc.Tensor:
    """Probability of each drivelet being human, shape (B, 1).

    Accepts a Drivelet, a (2N,) or (B, 2N) array, or a Tensor carrying
    gradients. Log losses downstream clamp to [1e-12, 1 - 1e-12].
    """
    x = _as_matrix(disc, drivelets)
    rows = (x.shape[0], 1)
    shift = lc.tensor(np.tile(-disc.input_mean, rows))
    inv = lc.tensor(np.tile(1.0 / disc.input_scale, rows))
    h = lc.mul(lc.add(x, shift), inv)
    for i in range(len(DISC_WIDTHS)):
        h = lc.tanh(lc.dense(h, disc.params[f"d{i}.w"],
                             disc.params[f"d{i}.b"]))
    last = len(DISC_WIDTHS)
    return lc.sigmoid(lc.dense(h, disc.params[f"d{last}.w"],
                               disc.params[f"d{last}.b"]))


def human_like_loss(disc: Discriminator, drivelets) -> lc.Tensor:
    """Mean -log D(drivelet); gradients reach the drivelets, never nu."""
    frozen = Discriminator(disc.n,
                           {k: lc.detach(p) for k, p in disc.params.items()},
                           disc.input_mean, disc.input_scale)
    return lc.neg_log(discriminator_prob(frozen, drivelets))


def discriminator_update(disc: Discriminator, opt: lc.AdamState,
                         human: np.ndarray, machine: np.ndarray):
    """One BCE step on real-unit drivelet batches (human = 1, machine = 0).

    Machine drivelets must already be detached values. Returns the batch
    loss and classification accuracy at the 0.5 threshold.
    """
    human = np.asarray(human, dtype=np.float64)
    machine = np.asarray(machine, dtype=np.float64)
    x = np.concatenate([human, machine], axis=0)
    y = np.concatenate([np.ones(len(human)), np.zeros(len(machine))])[:, None]
    p = discriminator_prob(disc, x)
    loss = lc.bce(p, y)
    if not np.isfinite(loss.data):
        raise FloatingPointError("discriminator loss became non-finite")
    lc.backward(loss)
    lc.adam_step(disc.params, opt)
    acc = float(np.mean((p.data >= 0.5) == (y == 1.0)))
    return float(loss.data), acc


@dataclasses.dataclass(frozen=True)
class AdvTrainConfig:
    lam: float = 0.5
    n: int = 3
    ratio: int = 1            # discriminator steps per policy step
    batch_size: int = 16
    epochs: int = 3
    steps_per_epoch: int = 100
    seed: int = 0
    lr: float = 1e-4
    disc_lr: float = 1e-3

    def validate(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.n < 1:
            raise ValueError("drivelet length must be >= 1")
        if self.ratio < 1:
            raise ValueError("update ratio must be >= 1")
        for name in ("batch_size", "epochs", "steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise ValueError("learning rates must be positive")
        return self


def train_adversarial(policy: dm.DrivingModel, disc: Discriminator, logs,
                      cfg: AdvTrainConfig):
    """Alternating min-max training; returns per-epoch history rows.

    The policy stream draws batches exactly as imitation training does, so
    lam = 0 reproduces that parameter trajectory bit for bit; the
    discriminator runs on its own seeded stream and its own optimizer.
    """
    cfg.validate()
    if disc.n != cfg.n:
        raise ValueError(f"discriminator N = {disc.n} but config N = {cfg.n}")
    ds = dm.WindowDataset(logs, policy.config.k, cfg.n,
                          with_masks=policy.config.variant == "am")
    if len(ds) < cfg.batch_size:
        raise ValueError(f"dataset has {len(ds)} windows, "
                         f"need >= {cfg.batch_size}")
    rng_pol = np.random.default_rng([int(cfg.seed), 1])
    rng_disc = np.random.default_rng([int(cfg.seed), 2])
    opt_pol = lc.AdamState(policy.params, lr=cfg.lr)
    opt_disc = lc.AdamState(disc.params, lr=cfg.disc_lr)
    scale_flat = np.tile(dm.ACTION_SCALE, cfg.n)
    pool = np.stack([dm.drivelet_target(ds.logs[li], end, cfg.n)
                     for li, end in ds.items])
    disc.input_mean, disc.input_scale = fit_input_stats(pool)
    history = []
    for epoch in range(cfg.epochs):
        imit_sum = hum_sum = acc_sum = 0.0
        n_disc = 0
        for step in range(cfg.steps_per_epoch):
            for _ in range(cfg.ratio):
                d_idx = dm.sample_batch(rng_disc, len(ds), cfg.batch_size)
                d_windows, d_targets = ds.batch(d_idx)
                pred = dm.predictions_norm(policy, d_windows, len(d_idx))
                machine = pred.data * scale_flat     # detached, real units
                _, acc = discriminator_update(disc, opt_disc, d_targets,
                                              machine)
                p_m = discriminator_prob(disc, machine).data
                hum_sum += float(np.mean(-np.log(np.clip(p_m, 1e-12, None))))
                acc_sum += acc
                n_disc += 1
            idx = dm.sample_batch(rng_pol, len(ds), cfg.batch_size)
            windows, targets = ds.batch(idx)
            pred = dm.predictions_norm(policy, windows, targets.shape[0])
            imit = lc.smooth_l1(pred, targets / scale_flat)
            if cfg.lam > 0:
                real = lc.mul(pred, lc.tensor(np.tile(scale_flat,
                                                      (targets.shape[0], 1))))
                hum = human_like_loss(disc, real)
                loss = lc.add(imit, lc.scale(hum, cfg.lam))
            else:
                loss = imit
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"policy loss became non-finite at epoch {epoch} "
                    f"step {step}: imit={float(imit.data)}")
            lc.backward(loss)
            lc.adam_step(policy.params, opt_pol)
            imit_sum += float(imit.data)
        history.append({"epoch": epoch,
                        "imit_loss": imit_sum / cfg.steps_per_epoch,
                        "hum_loss": hum_sum / n_disc,
                        "disc_acc": acc_sum / n_disc})
    return history


def write_history(path, history):
    """Training history as CSV: epoch, imit_loss, hum_loss, disc_acc."""
    with open(path, "w") as fh:
        fh.write("epoch,imit_loss,hum_loss,disc_acc\n")
        for row in history:
            fh.write(f"{row['epoch']},{float(row['imit_loss'])!r},"
                     f"{float(row['hum_loss'])!r},"
                     f"{float(row['disc_acc'])!r}\n")


def save_discriminator(path, disc: Discriminator):
    lc.save_checkpoint(path, disc.params,
                       meta={"n": disc.n,
                             "input_mean": disc.input_mean.tolist(),
                             "input_scale": disc.input_scale.tolist()})


def load_discriminator(path) -> Discriminator:
    params, meta = lc.load_checkpoint(path)
    n = int(meta["n"])
    return Discriminator(n, params, np.asarray(meta["input_mean"]),
                         np.asarray(meta["input_scale"]))
