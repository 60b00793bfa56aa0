"""Open-loop evaluation: MSE metrics, speed tolerance bands, scenario
subset filters, and the clustered-maneuver human-likeness score.

Maneuvers are 2 s windows of (steering, speed) samples taken every 1 s,
clustered with seeded k-means over z-scored windows. The human-likeness
score H is the percentage of time-aligned (model, human) window pairs
that land in the same cluster.
"""
import dataclasses
import json
import operator

import numpy as np

from . import driving_models as dm

WINDOW_S = 2.0
STEP_S = 1.0
DEFAULT_CLUSTERS = 50
KMEANS_TOL = 1e-6
KMEANS_MAX_ITERS = 300


# --- maneuver windows ---------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ManeuverWindow:
    """All steering samples then all speed samples of one 2 s slice,
    raw units (degrees, km/h)."""

    values: np.ndarray
    start: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 4 or vals.size % 4:
            raise ValueError(f"window needs 4f flat values, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("window values must be finite")
        object.__setattr__(self, "values", vals)


def maneuver_windows(actions, f: int, t0: float = 0.0):
    """Cut an (T, 2) action series into 2 s windows stepped by 1 s."""
    arr = np.asarray(actions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (T, 2) actions, got {arr.shape}")
    if f < 1:
        raise ValueError("rate f must be >= 1")
    w = int(round(WINDOW_S * f))
    step = int(round(STEP_S * f))
    out = []
    for i in range(0, arr.shape[0] - w + 1, step):
        vals = np.concatenate([arr[i:i + w, 0], arr[i:i + w, 1]])
        out.append(ManeuverWindow(vals, t0 + i / f))
    return out


def window_matrix(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return np.asarray(windows, dtype=np.float64)
    if not windows:
        raise ValueError("no maneuver windows")
    return np.stack([w.values for w in windows])


# --- clustering ------------------------------------------------------------------

@dataclasses.dataclass
class ClusterModel:
    """k-means centroids in z-scored window space, with the fit stats."""

    centroids: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    seed: int
    inertia_path: list


def _standardize(model: ClusterModel, x: np.ndarray) -> np.ndarray:
    return (x - model.mean) / model.std


def _sq_dists(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_fit(windows, k: int = DEFAULT_CLUSTERS,
               seed: int = 0) -> ClusterModel:
    """Seeded k-means++ plus Lloyd iterations on z-scored windows.

    Standardization stats come from these (human) windows and are reused
    for every later assignment. Converges when no centroid moves more
    than 1e-6, or after 300 iterations; empty clusters keep their spot.
    """
    x = window_matrix(windows)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"{n} windows cannot fill {k} clusters")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    z = (x - mean) / std

    rng = np.random.default_rng([int(seed), 13])
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = z[rng.integers(0, n)]
    d2 = ((z - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = int(rng.integers(0, n))
        centroids[j] = z[pick]
        d2 = np.minimum(d2, ((z - centroids[j]) ** 2).sum(axis=1))

    inertia_path = []
    for _ in range(KMEANS_MAX_ITERS):
        dists = _sq_dists(z, centroids)
        assign = dists.argmin(axis=1)
        inertia_path.append(float(dists[np.arange(n), assign].sum()))
        new = centroids.copy()
        for j in range(k):
            members = z[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < KMEANS_TOL:
            break
    return ClusterModel(centroids, mean, std, int(seed), inertia_path)


def assign_clusters(model: ClusterModel, windows) -> np.ndarray:
    """Nearest-centroid index per window; ties go to the lowest index."""
    z = _standardize(model, window_matrix(windows))
    return _sq_dists(z, model.centroids).argmin(axis=1)


def human_likeness_score(model_windows, human_windows,
                         cluster_model: ClusterModel) -> float:
    """Percentage of time-aligned window pairs sharing a cluster."""
    if len(model_windows) != len(human_windows) or not len(model_windows):
        raise ValueError("window lists must be aligned and non-empty")
    for mw, hw in zip(model_windows, human_windows):
        if isinstance(mw, ManeuverWindow) and isinstance(hw, ManeuverWindow):
            if abs(mw.start - hw.start) > 1e-9:
                raise ValueError(
                    f"misaligned windows: {mw.start} vs {hw.start}")
    a = assign_clusters(cluster_model, model_windows)
    b = assign_clusters(cluster_model, human_windows)
    return float(np.mean(a == b) * 100.0)


# --- pointwise metrics -------------------------------------------------------------

def mse_metrics(predictions, truth):
    """Per-channel MSE: (A_delta in degrees^2, A_v in (km/h)^2)."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2 or p.shape[1] != 2 or not len(p):
        raise ValueError(f"need matching (T, 2) arrays, got {p.shape} "
                         f"vs {t.shape}")
    err = (p - t) ** 2
    return float(err[:, 0].mean()), float(err[:, 1].mean())


def tolerance_accuracy(predictions, truth, tol: float = 1.0) -> float:
    """Percent of speed predictions within tol m/s of truth (inclusive).

    Inputs are km/h series, (T,) or (T, 2) with speed in column 1.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, 1]
    if t.ndim == 2:
        t = t[:, 1]
    if p.shape != t.shape or not len(p):
        raise ValueError(f"need matching non-empty series, got {p.shape} "
                         f"vs {t.shape}")
    # boundary is inclusive; the relative slack only absorbs float noise
    inside = np.abs(p - t) / 3.6 <= tol * (1.0 + 1e-12)
    return float(np.mean(inside) * 100.0)


# --- scenario predicates ------------------------------------------------------------

_LEAF_OPS = {"lt": operator.lt, "le": operator.le, "gt": operator.gt,
             "ge": operator.ge, "eq": operator.eq, "ne": operator.ne}
_TREE_OPS = ("and", "or")


@dataclasses.dataclass(frozen=True)
class ScenarioPredicate:
    """Comparison tree over per-timestep records (features plus speed v)."""

    op: str
    field: str | None = None
    value: float | None = None
    children: tuple = ()

    def __post_init__(self):
        if self.op in _LEAF_OPS:
            if not self.field or self.value is None or self.children:
                raise ValueError(f"leaf {self.op!r} needs field and value")
            if not np.isfinite(self.value):
                raise ValueError("comparison value must be finite")
        elif self.op in _TREE_OPS:
            if self.field or self.value is not None or not self.children:
                raise ValueError(f"{self.op!r} node needs children only")
            if not all(isinstance(c, ScenarioPredicate)
                       for c in self.children):
                raise ValueError("children must be predicates")
        else:
            raise ValueError(f"unknown predicate op {self.op!r}")

    def evaluate(self, record: dict) -> bool:
        # no short-circuit: unknown fields must surface from any branch
        if self.op == "and":
            return all([c.evaluate(record) for c in self.children])
        if self.op == "or":
            return any([c.evaluate(record) for c in self.children])
        if self.field not in record:
            raise KeyError(f"unknown feature field {self.field!r}")
        return bool(_LEAF_OPS[self.op](float(record[self.field]),
                                       float(self.value)))

    def to_spec(self) -> dict:
        if self.op in _TREE_OPS:
            return {"op": self.op,
                    "children": [c.to_spec() for c in self.children]}
        return {"op": self.op, "field": self.field, "value": self.value}

    @classmethod
    def from_spec(cls, spec: dict) -> "ScenarioPredicate":
        op = spec.get("op")
        if op in _TREE_OPS:
            kids = tuple(cls.from_spec(c) for c in spec.get("children", ()))
            return cls(op, children=kids)
        return cls(op, field=spec.get("field"), value=spec.get("value"))


def _leaf(op):
    def make(field: str, value: float) -> ScenarioPredicate:
        return ScenarioPredicate(op, field=field, value=float(value))
    make.__name__ = op
    return make


lt, le, gt, ge, eq, ne = (_leaf(o) for o in ("lt", "le", "gt", "ge", "eq",
                                             "ne"))


def all_of(*preds) -> ScenarioPredicate:
    return ScenarioPredicate("and", children=tuple(preds))


def any_of(*preds) -> ScenarioPredicate:
    return ScenarioPredicate("or", children=tuple(preds))


PRESETS = {
    # near a light or crossing on a slow road
    "A": all_of(any_of(lt("d_traffic_light", 40.0),
                       lt("d_ped_crossing", 40.0)),
                le("speed_limit", 50.0)),
    # fast curved road away from intersections
    "B": all_of(gt("curvature", 0.01), eq("speed_limit", 80.0),
                gt("d_intersection", 100.0)),
    # right before an intersection
    "C": lt("d_intersection", 20.0),
    # composite example: stopped close to a light
    "stopped_near_light": all_of(lt("d_traffic_light", 50.0),
                                 lt("v", 1.0)),
}

SITUATIONS = {
    "near_crosswalk_80m": lt("d_ped_crossing", 80.0),
    "near_traffic_light_80m": lt("d_traffic_light", 80.0),
    "near_yield_80m": lt("d_yield", 80.0),
}


def scenario_record(log, t: int) -> dict:
    """Raw-unit features of one timestep plus the driven speed v (km/h)."""
    rec = dict(log.feature_rows[t])
    rec["v"] = float(log.actions[t, 1])
    return rec


def filter_scenario(log, predicate: ScenarioPredicate) -> np.ndarray:
    """Timestep indices of the log where the predicate holds."""
    hits = [t for t in range(len(log))
            if predicate.evaluate(scenario_record(log, t))]
    return np.array(hits, dtype=int)


# --- whole-model evaluation -----------------------------------------------------------

def model_predictions(model: dm.DrivingModel, log, batch_size: int = 64):
    """Open-loop predictions over every usable window of one log.

    Returns (t0, preds) where preds[j] is the real-unit action predicted
    for timestep t0 + j from the window ending at t0 + j - horizon.
    """
    k = model.config.k
    h = dm.horizon_steps(log.f)
    t_lo, t_hi = k - 1, len(log) - h
    if t_hi <= t_lo:
        raise ValueError(f"log of {len(log)} frames too short for k={k}")
    with_masks = model.config.variant == "am"
    preds = np.empty((t_hi - t_lo, 2))
    for i in range(t_lo, t_hi, batch_size):
        ts = range(i, min(i + batch_size, t_hi))
        windows = [dm.window_from_log(log, t, k, with_masks) for t in ts]
        out = dm.predictions_norm(model, windows, len(windows)).data
        preds[i - t_lo:i - t_lo + len(windows)] = out * dm.ACTION_SCALE
    preds[:, 1] = np.maximum(preds[:, 1], 0.0)   # inference-side speed clamp
    return t_lo + h, preds


def evaluate_predictions(per_log, logs, model_name: str,
                         clusters: int = DEFAULT_CLUSTERS, seed: int = 0,
                         presets: dict | None = None,
                         situations: dict | None = None) -> dict:
    """Metrics report from precomputed (t0, predictions) pairs.

    Subsets with no matching timesteps are left out of the report rather
    than reported as zero.
    """
    if len(per_log) != len(logs) or not logs:
        raise ValueError("need one (t0, preds) pair per log")
    presets = PRESETS if presets is None else presets
    situations = SITUATIONS if situations is None else situations
    named = {**presets, **situations}

    pred_parts, truth_parts = [], []
    masks = {name: [] for name in named}
    model_windows, human_windows = [], []
    for (t0, preds), log in zip(per_log, logs):
        m = len(preds)
        h = dm.horizon_steps(log.f)
        truth = log.actions[t0:t0 + m]
        pred_parts.append(preds)
        truth_parts.append(truth)
        for name, predicate in named.items():
            hold = [predicate.evaluate(scenario_record(log, t0 - h + j))
                    for j in range(m)]
            masks[name].append(np.array(hold, dtype=bool))
        start_s = t0 / log.f
        human_windows.extend(maneuver_windows(truth, log.f, start_s))
        model_windows.extend(maneuver_windows(preds, log.f, start_s))

    pred_all = np.concatenate(pred_parts)
    truth_all = np.concatenate(truth_parts)
    full = np.ones(len(pred_all), dtype=bool)
    subset_masks = {"full": full}
    subset_masks.update({n: np.concatenate(parts)
                         for n, parts in masks.items()})

    subsets = {}
    for name, mask in subset_masks.items():
        count = int(mask.sum())
        if count == 0:
            continue
        a_delta, a_v = mse_metrics(pred_all[mask], truth_all[mask])
        subsets[name] = {"count": count, "a_delta": a_delta, "a_v": a_v,
                         "tolerance_accuracy": tolerance_accuracy(
                             pred_all[mask], truth_all[mask])}

    report = {"model": model_name, "n_logs": len(logs),
              "n_pairs": int(len(pred_all)), "cluster_k": int(clusters),
              "cluster_seed": int(seed), "subsets": subsets,
              "n_maneuver_windows": len(human_windows)}
    if human_windows:
        cluster_model = kmeans_fit(human_windows, clusters, seed)
        report["human_likeness"] = human_likeness_score(
            model_windows, human_windows, cluster_model)
    return report


def evaluate_model(model: dm.DrivingModel, logs, model_name: str = None,
                   clusters: int = DEFAULT_CLUSTERS, seed: int = 0,
                   presets: dict | None = None,
                   situations: dict | None = None,
                   batch_size: int = 64) -> dict:
    per_log = [model_predictions(model, log, batch_size) for log in logs]
    name = model.config.variant if model_name is None else model_name
    return evaluate_predictions(per_log, logs, name, clusters, seed,
                                presets, situations)


def write_report(report: dict, json_path=None, csv_path=None):
    """Persist a report as canonical JSON and long-form CSV rows."""
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if csv_path is not None:
        rows = []
        for subset in sorted(report["subsets"]):
            vals = report["subsets"][subset]
            for metric in ("count", "a_delta", "a_v", "tolerance_accuracy"):
                rows.append((report["model"], subset, metric,
                             repr(float(vals[metric]))))
        if "human_likeness" in report:
            rows.append((report["model"], "full", "human_likeness",
                         repr(float(report["human_likeness"]))))
        with open(csv_path, "w") as fh:
            fh.write("model,subset,metric,value\n")
            for row in rows:
                fh.write(",".join(str(c) for c in row) + "\n")
