"""Driving policies over K-frame observation windows.

Three variants share one trunk. "bd" fuses an ego-view encoding (recurrent
over the window) with a rendered-map encoding. "m" adds a latent from the
flat semantic feature vector. "am" additionally promotes the class
confidence masks with an attention vector computed from the semantic
features and the running LSTM state, and feeds the promoted masks to the
image encoder as extra channels.

All tensors are `learncore` nodes so the whole policy is differentiable end
to end. Actions are steering-wheel degrees and km/h; heads learn in a
normalized space (see ACTION_SCALE) and predictions are for one second
ahead of the window's last frame.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import learncore as lc
from . import semantic_features as sf

VARIANTS = ("bd", "m", "am")

EGO_CHANNELS = 4
MAP_CHANNELS = 3
MASK_CHANNELS = 19
RASTER_SIZE = 64
POOL_FACTOR = 4
N_FEATURES = len(sf.FLAT_FEATURE_NAMES)

ATTENTION_EPS = 1e-19

# head outputs are unitless; real actions are output * scale
ACTION_SCALE = np.array([180.0, 40.0])   # steering-wheel deg, km/h

PREDICTION_HORIZON_S = 1.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "m"
    k: int = 4
    encoder_widths: tuple = (128, 64)
    lstm_hidden: int = 64
    head_widths: tuple = (64, 64, 32)
    semantic_widths: tuple = (30, 30, 30)
    attention_widths: tuple = (128, 64, 19)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for widths in (self.encoder_widths, self.head_widths,
                       self.semantic_widths, self.attention_widths):
            if len(widths) < 1 or any(w < 1 for w in widths):
                raise ValueError(f"widths must be positive: {widths}")
        if self.attention_widths[-1] != MASK_CHANNELS:
            raise ValueError("attention output width must equal the number "
                             f"of mask channels ({MASK_CHANNELS})")

    @property
    def image_channels(self) -> int:
        return EGO_CHANNELS + (MASK_CHANNELS if self.variant == "am" else 0)

    @property
    def fused_width(self) -> int:
        base = 2 * self.encoder_widths[-1] + self.lstm_hidden
        if self.variant in ("m", "am"):
            base += self.semantic_widths[-1]
        return base


@dataclass
class ObservationWindow:
    """K synchronized frames; masks may be None for variants that skip them."""
    ego: np.ndarray        # (K, 4, 64, 64)
    maps: np.ndarray       # (K, 3, 64, 64)
    features: np.ndarray   # (K, n_features)
    masks: np.ndarray | None = None   # (K, 19, 64, 64)

    def __post_init__(self):
        k = self.ego.shape[0]
        side = (RASTER_SIZE, RASTER_SIZE)
        if self.ego.shape != (k, EGO_CHANNELS) + side:
            raise ValueError(f"bad ego shape {self.ego.shape}")
        if self.maps.shape != (k, MAP_CHANNELS) + side:
            raise ValueError(f"bad map shape {self.maps.shape}")
        if self.features.shape != (k, N_FEATURES):
            raise ValueError(f"bad feature shape {self.features.shape}")
        if self.masks is not None and self.masks.shape != (k, MASK_CHANNELS) + side:
            raise ValueError(f"bad mask shape {self.masks.shape}")

    @property
    def k(self) -> int:
        return self.ego.shape[0]


@dataclass(frozen=True)
class Action:
    delta: float   # steering-wheel degrees
    v: float       # km/h, clamped >= 0 at inference

    def __post_init__(self):
        if not (np.isfinite(self.delta) and np.isfinite(self.v)):
            raise ValueError("action must be finite")


class DrivingModel:
    def __init__(self, config: ModelConfig, params: dict[str, lc.Tensor]):
        config.validate()
        self.config = config
        self.params = params

    def clone(self) -> "DrivingModel":
        return DrivingModel(self.config, {
            k: lc.param(p.data.copy()) for k, p in self.params.items()})


def build_model(config: ModelConfig, seed: int) -> DrivingModel:
    """Seeded parameter init; creation order is fixed so names and values
    are reproducible."""
    config.validate()
    rng = np.random.default_rng([int(seed), 7])
    p: dict[str, lc.Tensor] = {}

    def stack(prefix, n_in, widths):
        for i, w in enumerate(widths):
            p[f"{prefix}.{i}.w"], p[f"{prefix}.{i}.b"] = lc.init_dense(
                rng, n_in, w)
            n_in = w
        return n_in

    pooled = (RASTER_SIZE // POOL_FACTOR) ** 2
    stack("img", config.image_channels * pooled, config.encoder_widths)
    stack("map", MAP_CHANNELS * pooled, config.encoder_widths)
    p["lstm.w"], p["lstm.b"] = lc.init_lstm(rng, config.encoder_widths[-1],
                                            config.lstm_hidden)
    if config.variant in ("m", "am"):
        stack("sem", N_FEATURES, config.semantic_widths)
    if config.variant == "am":
        stack("att", N_FEATURES + config.lstm_hidden, config.attention_widths)
    for head in ("steer", "speed"):
        n_in = stack(head, config.fused_width, config.head_widths)
        p[f"{head}.out.w"], p[f"{head}.out.b"] = lc.init_dense(rng, n_in, 1)
    return DrivingModel(config, p)


def _mlp(params, prefix, x, n_layers, final_relu=True):
    for i in range(n_layers):
        x = lc.dense(x, params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"])
        if final_relu or i < n_layers - 1:
            x = lc.relu(x)
    return x


def encode_image(model: DrivingModel, raster: lc.Tensor) -> lc.Tensor:
    """(B, C, 64, 64) raster -> (B, width) latent: 4x box pool, then dense."""
    c = model.config
    if raster.shape[1] != c.image_channels:
        raise ValueError(f"image encoder expects {c.image_channels} channels, "
                         f"got {raster.shape[1]}")
    x = lc.avg_pool2d(raster, POOL_FACTOR)
    x = lc.reshape(x, (raster.shape[0], -1))
    return _mlp(model.params, "img", x, len(c.encoder_widths))


def encode_map(model: DrivingModel, raster: lc.Tensor) -> lc.Tensor:
    if raster.shape[1] != MAP_CHANNELS:
        raise ValueError(f"map encoder expects {MAP_CHANNELS} channels, "
                         f"got {raster.shape[1]}")
    x = lc.avg_pool2d(raster, POOL_FACTOR)
    x = lc.reshape(x, (raster.shape[0], -1))
    return _mlp(model.params, "map", x, len(model.config.encoder_widths))


def encode_semantic(model: DrivingModel, n_t: lc.Tensor) -> lc.Tensor:
    if n_t.shape[1] != N_FEATURES:
        raise ValueError(f"semantic encoder expects {N_FEATURES} features, "
                         f"got {n_t.shape[1]}")
    return _mlp(model.params, "sem", n_t, len(model.config.semantic_widths))


def promote_masks(alpha: lc.Tensor, cm: lc.Tensor) -> tuple[lc.Tensor, lc.Tensor]:
    """Normalized promotion (a, PCM): a = alpha / max(||alpha||_2, eps),
    PCM_i = a_i * CM_i per channel."""
    if cm.shape[1] != alpha.shape[1]:
        raise ValueError(f"mask channels {cm.shape[1]} != attention width "
                         f"{alpha.shape[1]}")
    a = lc.l2norm_with_floor(alpha, ATTENTION_EPS)
    return a, lc.scale_channels(cm, a)


def attention_promote(model: DrivingModel, n_t: lc.Tensor, h_prev: lc.Tensor,
                      cm: lc.Tensor) -> lc.Tensor:
    """Attention-promoted confidence masks from (n_t, h_{t-1})."""
    if model.config.variant != "am":
        raise ValueError("attention requires the am variant")
    x = lc.concat([n_t, h_prev], axis=1)
    alpha = _mlp(model.params, "att", x, len(model.config.attention_widths),
                 final_relu=False)
    _, pcm = promote_masks(alpha, cm)
    return pcm


def _forward_norm(model: DrivingModel, ego: np.ndarray, maps: np.ndarray,
                  feats: np.ndarray, masks: np.ndarray | None) -> lc.Tensor:
    """Batched policy forward to normalized (B, 2) actions.

    Inputs are (B, K, ...) teacher-forced streams. The image LSTM runs over
    the K frames; the attention (am) at frame j uses the hidden state after
    frame j-1, starting from zeros.
    """
    c = model.config
    b, k = ego.shape[0], ego.shape[1]
    if k != c.k:
        raise ValueError(f"window has {k} frames, model expects {c.k}")
    if c.variant == "am" and masks is None:
        raise ValueError("variant am needs confidence masks")
    h = lc.tensor(np.zeros((b, c.lstm_hidden)))
    cell = lc.tensor(np.zeros((b, c.lstm_hidden)))
    z_i = None
    for j in range(k):
        x = lc.tensor(ego[:, j])
        if c.variant == "am":
            pcm = attention_promote(model, lc.tensor(feats[:, j]), h,
                                    lc.tensor(masks[:, j]))
            x = lc.concat([x, pcm], axis=1)
        z_i = encode_image(model, x)
        h, cell = lstm_step(model, z_i, h, cell)
    parts = [z_i, encode_map(model, lc.tensor(maps[:, -1])), h]
    if c.variant in ("m", "am"):
        parts.append(encode_semantic(model, lc.tensor(feats[:, -1])))
    fused = lc.concat(parts, axis=1)
    heads = []
    for name in ("steer", "speed"):
        y = _mlp(model.params, name, fused, len(c.head_widths))
        heads.append(lc.dense(y, model.params[f"{name}.out.w"],
                              model.params[f"{name}.out.b"]))
    return lc.concat(heads, axis=1)


def lstm_step(model: DrivingModel, z: lc.Tensor, h: lc.Tensor,
              cell: lc.Tensor) -> tuple[lc.Tensor, lc.Tensor]:
    return lc.lstm_cell_step(z, h, cell, model.params["lstm.w"],
                             model.params["lstm.b"])


def _window_arrays(windows: list[ObservationWindow], variant: str):
    ego = np.stack([w.ego for w in windows])
    maps = np.stack([w.maps for w in windows])
    feats = np.stack([w.features for w in windows])
    masks = None
    if variant == "am":
        if any(w.masks is None for w in windows):
            raise ValueError("variant am needs confidence masks")
        masks = np.stack([w.masks for w in windows])
    return ego, maps, feats, masks


def forward_norm(model: DrivingModel,
                 windows: list[ObservationWindow]) -> lc.Tensor:
    """Training-path forward: normalized (B, 2) actions, no clamping."""
    return _forward_norm(model, *_window_arrays(windows, model.config.variant))


def forward(model: DrivingModel, window: ObservationWindow) -> Action:
    """Inference: one window to the real-unit action one second ahead."""
    out = forward_norm(model, [window]).data[0] * ACTION_SCALE
    return Action(delta=float(out[0]), v=max(float(out[1]), 0.0))


# --- log windows and drivelets ---------------------------------------------------

def horizon_steps(f: float) -> int:
    """Log steps per prediction horizon (one second)."""
    return max(int(round(f * PREDICTION_HORIZON_S)), 1)


def window_from_log(log, end: int, k: int,
                    with_masks: bool = True) -> ObservationWindow:
    """Teacher-forced window of the K frames ending at log index `end`."""
    if end - k + 1 < 0 or end >= len(log):
        raise IndexError(f"window ending at {end} does not fit the log")
    lo, hi = end - k + 1, end + 1
    return ObservationWindow(
        ego=log.ego_u8[lo:hi] / 255.0,
        maps=log.map_u8[lo:hi] / 255.0,
        features=log.features[lo:hi],
        masks=log.mask_u8[lo:hi] / 255.0 if with_masks else None)


def drivelet_target(log, t: int, n: int) -> np.ndarray:
    """The stored human actions the drivelet at window-end t must match:
    a flat (2n,) slice starting one horizon after t."""
    h = horizon_steps(log.f)
    lo, hi = t + h, t + h + n
    if hi > len(log):
        raise IndexError(f"drivelet target [{lo}:{hi}] outside log")
    return log.actions[lo:hi].reshape(-1)


def predict_drivelet(model: DrivingModel, log, t: int, n: int = 3) -> lc.Tensor:
    """N consecutive predictions from teacher-forced windows ending at
    t .. t+n-1, flattened to (2n,) real-unit values; differentiable."""
    if n < 1:
        raise ValueError("drivelet length must be >= 1")
    k = model.config.k
    if t < k - 1:
        raise IndexError(f"window ending at {t} does not fit k={k}")
    drivelet_target(log, t + n - 1, 1)   # bounds check for the last target
    windows = [window_from_log(log, t + j, k) for j in range(n)]
    out = forward_norm(model, windows)                    # (n, 2) normalized
    flat = lc.reshape(out, (1, 2 * n))
    scale_row = lc.tensor(np.tile(ACTION_SCALE, n)[None, :])
    return lc.reshape(lc.mul(flat, scale_row), (2 * n,))


# --- imitation training -------------------------------------------------------------

class WindowDataset:
    """All (log, window-end) pairs usable for K-windows with N-step targets."""

    def __init__(self, logs, k: int, n: int = 1, with_masks: bool = True):
        self.logs = list(logs)
        self.k, self.n = int(k), int(n)
        self.with_masks = with_masks
        self.items = []
        for li, log in enumerate(self.logs):
            h = horizon_steps(log.f)
            for end in range(k - 1, len(log) - h - n + 1):
                self.items.append((li, end))
        if not self.items:
            raise ValueError("no usable windows: logs shorter than k + horizon")

    def __len__(self):
        return len(self.items)

    def batch(self, idx):
        """Stacked (B*n, K, ...) window streams and (B, 2n) real-unit targets."""
        windows, targets = [], []
        for i in idx:
            li, end = self.items[int(i)]
            log = self.logs[li]
            for j in range(self.n):
                windows.append(window_from_log(log, end + j, self.k,
                                               self.with_masks))
            targets.append(drivelet_target(log, end, self.n))
        return windows, np.stack(targets)


def predictions_norm(model: DrivingModel, windows, batch: int) -> lc.Tensor:
    """Predicted drivelets as a (batch, 2n) tensor in normalized action space."""
    out = forward_norm(model, windows)                 # (B*n, 2) normalized
    return lc.reshape(out, (batch, -1))


def imitation_loss(model: DrivingModel, windows, targets: np.ndarray) -> lc.Tensor:
    """Mean SmoothL1 between predicted and stored drivelets, in the
    normalized action space."""
    pred = predictions_norm(model, windows, targets.shape[0])
    norm = targets / np.tile(ACTION_SCALE, targets.shape[1] // 2)
    return lc.smooth_l1(pred, norm)


def sample_batch(rng: np.random.Generator, n_items: int,
                 batch_size: int) -> np.ndarray:
    return rng.integers(0, n_items, size=min(batch_size, n_items))


def train_imitation(model: DrivingModel, logs, epochs: int = 3,
                    steps_per_epoch: int = 100, batch_size: int = 16,
                    n: int = 1, seed: int = 0, lr: float = 1e-4):
    """Eq.-style supervised imitation; returns per-step history rows."""
    ds = WindowDataset(logs, model.config.k, n,
                       with_masks=model.config.variant == "am")
    rng = np.random.default_rng([int(seed), 1])
    opt = lc.AdamState(model.params, lr=lr)
    history = []
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            idx = sample_batch(rng, len(ds), batch_size)
            windows, targets = ds.batch(idx)
            loss = imitation_loss(model, windows, targets)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"imitation loss became non-finite at epoch {epoch}")
            lc.backward(loss)
            lc.adam_step(model.params, opt)
            history.append({"epoch": epoch, "imit_loss": float(loss.data)})
    return history


# --- persistence ----------------------------------------------------------------------

def save_model(path, model: DrivingModel):
    lc.save_checkpoint(path, model.params,
                       meta={"config": dataclasses.asdict(model.config)})


def load_model(path) -> DrivingModel:
    params, meta = lc.load_checkpoint(path)
    raw = dict(meta["config"])
    for key in ("encoder_widths", "head_widths", "semantic_widths",
                "attention_widths"):
        raw[key] = tuple(raw[key])
    return DrivingModel(ModelConfig(**raw), params)
