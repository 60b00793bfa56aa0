"""Minimal deterministic reverse-mode autodiff on float64 numpy arrays.

Just enough machinery for the driving models: dense layers, pointwise
nonlinearities, pooling, an LSTM cell composed from primitives, the three
losses, and Adam. Every op records its parents on the value itself; backward
walks the graph once in reverse topological order, so gradient accumulation
order is fixed and runs are bit-reproducible for a fixed seed.
"""
from __future__ import annotations

import json
import pathlib

import numpy as np

LOG_CLAMP = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def tensor(data) -> Tensor:
    return Tensor(data)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def detach(x: Tensor) -> Tensor:
    """Same values, cut off from the graph."""
    return Tensor(x.data.copy())


def _node(data, parents, backward_fn) -> Tensor:
    track = any(p.requires_grad or p._parents for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, _parents=tuple(parents), _backward=backward_fn)


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


# --- primitive ops -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add shapes differ: {a.shape} vs {b.shape}")

    def bw(g, out):
        return g, g
    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"sub shapes differ: {a.shape} vs {b.shape}")

    def bw(g, out):
        return g, -g
    return _node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul shapes differ: {a.shape} vs {b.shape}")

    def bw(g, out):
        return g * b.data, g * a.data
    return _node(a.data * b.data, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    def bw(g, out):
        return (g * c,)
    return _node(x.data * c, (x,), bw)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x (B, n_in) @ w (n_in, n_out) + b (n_out,)."""
    _check(x.data.ndim == 2 and w.data.ndim == 2, "dense expects 2-d x and w")
    _check(x.shape[1] == w.shape[0],
           f"dense: x {x.shape} incompatible with w {w.shape}")
    _check(b.shape == (w.shape[1],), f"dense: bad bias shape {b.shape}")

    def bw(g, out):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)
    return _node(x.data @ w.data + b.data, (x, w, b), bw)


def relu(x: Tensor) -> Tensor:
    def bw(g, out):
        return (g * (x.data > 0),)
    return _node(np.maximum(x.data, 0.0), (x,), bw)


def tanh(x: Tensor) -> Tensor:
    def bw(g, out):
        return (g * (1.0 - out.data ** 2),)
    return _node(np.tanh(x.data), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    def bw(g, out):
        return (g * out.data * (1.0 - out.data),)
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                 np.exp(x.data) / (1.0 + np.exp(x.data)))
    return _node(y, (x,), bw)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    _check(len(parts) >= 1, "concat needs at least one input")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, out):
        return tuple(np.split(g, splits, axis=axis))
    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def slice_cols(x: Tensor, a: int, b: int) -> Tensor:
    _check(x.data.ndim == 2, "slice_cols expects a 2-d tensor")
    _check(0 <= a < b <= x.shape[1], f"bad column slice [{a}:{b}] of {x.shape}")

    def bw(g, out):
        gx = np.zeros_like(x.data)
        gx[:, a:b] = g
        return (gx,)
    return _node(x.data[:, a:b].copy(), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g, out):
        return (g.reshape(x.data.shape),)
    return _node(x.data.reshape(shape), (x,), bw)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Mean over k x k blocks; x is (B, C, H, W), k divides H and W."""
    b_, c, h, w = x.shape
    _check(h % k == 0 and w % k == 0, f"pool size {k} must divide {h}x{w}")
    xr = x.data.reshape(b_, c, h // k, k, w // k, k)

    def bw(g, out):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)
    return _node(xr.mean(axis=(3, 5)), (x,), bw)


def max_pool2d(x: Tensor, k: int) -> Tensor:
    b_, c, h, w = x.shape
    _check(h % k == 0 and w % k == 0, f"pool size {k} must divide {h}x{w}")
    hk, wk = h // k, w // k
    xr = x.data.reshape(b_, c, hk, k, wk, k).transpose(0, 1, 2, 4, 3, 5)
    flat = xr.reshape(b_, c, hk, wk, k * k)
    idx = flat.argmax(axis=-1)

    def bw(g, out):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
        gx = gf.reshape(b_, c, hk, wk, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(b_, c, h, w),)
    return _node(flat.max(axis=-1), (x,), bw)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel map of x (B, C, H, W) by s (B, C)."""
    _check(x.data.ndim == 4 and s.data.ndim == 2, "scale_channels: bad ranks")
    _check(x.shape[:2] == s.shape,
           f"scale_channels: {x.shape} incompatible with {s.shape}")

    def bw(g, out):
        return g * s.data[:, :, None, None], (g * x.data).sum(axis=(2, 3))
    return _node(x.data * s.data[:, :, None, None], (x, s), bw)


def channel_sum(x: Tensor) -> Tensor:
    """Sum a (B, C, H, W) stack over C into (B, 1, H, W)."""
    _check(x.data.ndim == 4, "channel_sum expects (B, C, H, W)")

    def bw(g, out):
        return (np.broadcast_to(g, x.data.shape).copy(),)
    return _node(x.data.sum(axis=1, keepdims=True), (x,), bw)


def l2norm_with_floor(x: Tensor, eps: float) -> Tensor:
    """Row-wise x / max(||x||_2, eps); rows at or below the floor use the
    constant 1/eps denominator (and its gradient)."""
    _check(x.data.ndim == 2, "l2norm_with_floor expects (B, n)")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = x.data / denom
    above = norms > eps

    def bw(g, out):
        dot = (g * y).sum(axis=1, keepdims=True)
        g_norm = (g - y * dot) / denom          # true normalization branch
        g_floor = g / eps                        # floor branch
        return (np.where(above, g_norm, g_floor),)
    return _node(y, (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g, out):
        return (np.full_like(x.data, float(g)),)
    return _node(np.array(x.data.sum()), (x,), bw)


def mean_all(x: Tensor) -> Tensor:
    def bw(g, out):
        return (np.full_like(x.data, float(g) / x.data.size),)
    return _node(np.array(x.data.mean()), (x,), bw)


# --- losses --------------------------------------------------------------------

def smooth_l1(pred: Tensor, target) -> Tensor:
    """Mean smooth-L1: 0.5 r^2 inside |r| < 1, |r| - 0.5 outside."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, float)
    _check(pred.shape == t.shape, f"smooth_l1 shapes differ: {pred.shape} vs {t.shape}")
    r = pred.data - t
    inside = np.abs(r) < 1.0
    vals = np.where(inside, 0.5 * r * r, np.abs(r) - 0.5)

    def bw(g, out):
        return (float(g) * np.where(inside, r, np.sign(r)) / r.size,)
    return _node(np.array(vals.mean()), (pred,), bw)


def bce(prob: Tensor, label) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-12, 1 - 1e-12]."""
    y = label.data if isinstance(label, Tensor) else np.asarray(label, float)
    _check(prob.shape == y.shape, f"bce shapes differ: {prob.shape} vs {y.shape}")
    p = np.clip(prob.data, LOG_CLAMP, 1.0 - LOG_CLAMP)
    live = (prob.data > LOG_CLAMP) & (prob.data < 1.0 - LOG_CLAMP)
    vals = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))

    def bw(g, out):
        return (float(g) * live * (p - y) / (p * (1.0 - p)) / p.size,)
    return _node(np.array(vals.mean()), (prob,), bw)


def neg_log(prob: Tensor) -> Tensor:
    """Mean of -log(prob), clamped at 1e-12."""
    p = np.maximum(prob.data, LOG_CLAMP)
    live = prob.data > LOG_CLAMP

    def bw(g, out):
        return (float(g) * live * (-1.0 / p) / p.size,)
    return _node(np.array(-np.log(p).mean()), (prob,), bw)


# --- backward ---------------------------------------------------------------------

def backward(loss: Tensor):
    """Reverse-mode gradients from a scalar loss.

    Gradients of every tensor reachable from the loss are reset first, so each
    call stands alone; parameters keep their .grad for the optimizer.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        gs = node._backward(node.grad, node)
        for p, g in zip(node._parents, gs):
            p.grad += g


# --- lstm cell ----------------------------------------------------------------------

def init_dense(rng: np.random.Generator, n_in: int, n_out: int):
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight and bias."""
    bound = 1.0 / np.sqrt(n_in)
    w = param(rng.uniform(-bound, bound, (n_in, n_out)))
    b = param(rng.uniform(-bound, bound, (n_out,)))
    return w, b


def init_lstm(rng: np.random.Generator, n_in: int, n_hidden: int):
    """Single fused gate matrix over [x, h]; gate order i, f, g, o."""
    return init_dense(rng, n_in + n_hidden, 4 * n_hidden)


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; x (B, n_in), h/c (B, n_hidden)."""
    n_h = h_prev.shape[1]
    _check(w.shape == (x.shape[1] + n_h, 4 * n_h),
           f"lstm: w {w.shape} incompatible with x {x.shape}, h {h_prev.shape}")
    z = dense(concat([x, h_prev], axis=1), w, b)
    i = sigmoid(slice_cols(z, 0, n_h))
    f = sigmoid(slice_cols(z, n_h, 2 * n_h))
    g = tanh(slice_cols(z, 2 * n_h, 3 * n_h))
    o = sigmoid(slice_cols(z, 3 * n_h, 4 * n_h))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# --- optimizer -------------------------------------------------------------------------

class AdamState:
    """Bias-corrected Adam; moments keyed like the parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState):
    """One in-place update from each parameter's .grad (missing grad = zero)."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for k in sorted(params):
        p = params[k]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"adam: grad shape {g.shape} != param {p.data.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / (1.0 - b1 ** t)
        v_hat = state.v[k] / (1.0 - b2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- checkpoints -------------------------------------------------------------------------

def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None):
    """Flat float64 binary at `path` plus a JSON manifest at `path`.json."""
    path = pathlib.Path(path)
    manifest = {"dtype": "float64", "params": {}, "meta": meta or {}}
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = params[name].data
        manifest["params"][name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.reshape(-1))
        offset += arr.size
    path.write_bytes(np.concatenate(chunks).tobytes() if chunks else b"")
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    path = pathlib.Path(path)
    manifest = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if manifest.get("dtype") != "float64":
        raise ValueError(f"unsupported checkpoint dtype {manifest.get('dtype')!r}")
    flat = np.frombuffer(path.read_bytes(), dtype=np.float64)
    params = {}
    for name, rec in manifest["params"].items():
        shape = tuple(rec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = flat[rec["offset"]:rec["offset"] + n].reshape(shape)
        params[name] = param(arr.copy())
    return params, manifest.get("meta", {})
