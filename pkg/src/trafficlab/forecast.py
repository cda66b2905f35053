"""Hourly vehicle-count forecaster: a single-layer LSTM written directly in numpy.

Inputs per hour are the count observed in the previous hour plus the calendar
fields (year, month, day, hour, minute), min-max normalised with constants
taken from the training data. The cell is the usual one::

    i = sigmoid(W_i x + U_i h + b_i)      f = sigmoid(W_f x + U_f h + b_f)
    o = sigmoid(W_o x + U_o h + b_o)      g = tanh(W_g x + U_g h + b_g)
    c = f * c_prev + i * g                h = o * tanh(c)

and the prediction is a linear read-out of the last hidden state, mapped back
to vehicles. Training is full-batch gradient descent on mean squared error in
normalised target space with backpropagation through time and global-norm
gradient clipping. Longer horizons are rolled out autoregressively, feeding
each prediction back in as the next hour's ``count_last_hour``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

FEATURES = ("count_last_hour", "year", "month", "day", "hour", "minute")
INPUT_DIM = len(FEATURES)
GATES = ("input", "forget", "output", "candidate")
HOUR = timedelta(hours=1)
MODEL_FORMAT = "trafficlab-lstm"


class ModelError(ValueError):
    """Parameter shapes or input dimensions do not fit together."""


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureVector:
    count_last_hour: float
    year: int
    month: int
    day: int
    hour: int
    minute: int
    normalized: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (1 <= self.month <= 12 and 1 <= self.day <= 31
                and 0 <= self.hour <= 23 and 0 <= self.minute <= 59):
            raise ValueError(f"calendar fields out of range: {self}")

    @classmethod
    def at(cls, count_last_hour: float, ts: datetime) -> FeatureVector:
        return cls(float(count_last_hour), ts.year, ts.month, ts.day, ts.hour, ts.minute)

    @property
    def timestamp(self) -> datetime:
        return datetime(self.year, self.month, self.day, self.hour, self.minute)

    def raw(self) -> np.ndarray:
        return np.array([self.count_last_hour, self.year, self.month, self.day,
                         self.hour, self.minute], dtype=float)


def build_features(counts: Sequence[float], timestamps: Sequence[datetime]) -> list[FeatureVector]:
    """One vector per position ``t >= 1``: the count at ``t-1`` and the calendar of ``t``."""
    if len(counts) != len(timestamps):
        raise ValueError(f"{len(counts)} counts but {len(timestamps)} timestamps")
    if len(counts) < 2:
        raise ValueError("need at least two hourly counts")
    return [FeatureVector.at(counts[t - 1], timestamps[t]) for t in range(1, len(counts))]


def query_history(counts: Sequence[float], timestamps: Sequence[datetime]) -> list[FeatureVector]:
    """Features for every observed hour plus the query vector for the hour after the last."""
    feats = build_features(counts, timestamps)
    feats.append(FeatureVector.at(counts[-1], timestamps[-1] + HOUR))
    return feats


def as_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    return np.stack([v.raw() for v in vectors]) if vectors else np.empty((0, INPUT_DIM))


@dataclass(frozen=True)
class Normalizer:
    """Per-feature and target min/max; constant columns are only shifted."""

    feature_min: tuple[float, ...]
    feature_max: tuple[float, ...]
    target_min: float
    target_max: float

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> Normalizer:
        flat = np.asarray(X, dtype=float).reshape(-1, INPUT_DIM)
        y = np.asarray(y, dtype=float)
        return cls(tuple(flat.min(0).tolist()), tuple(flat.max(0).tolist()),
                   float(y.min()), float(y.max()))

    def _span(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.feature_min)
        span = np.asarray(self.feature_max) - lo
        return lo, np.where(span > 0, span, 1.0)

    @property
    def target_span(self) -> float:
        span = self.target_max - self.target_min
        return span if span > 0 else 1.0

    def features(self, X: np.ndarray) -> np.ndarray:
        lo, span = self._span()
        return (np.asarray(X, dtype=float) - lo) / span

    def features_inverse(self, Z: np.ndarray) -> np.ndarray:
        lo, span = self._span()
        return np.asarray(Z, dtype=float) * span + lo

    def target(self, y: np.ndarray | float) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_min) / self.target_span

    def target_inverse(self, z: np.ndarray | float) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.target_span + self.target_min

    def apply(self, v: FeatureVector) -> FeatureVector:
        return replace(v, normalized=tuple(self.features(v.raw()).tolist()))


IDENTITY = Normalizer((0.0,) * INPUT_DIM, (1.0,) * INPUT_DIM, 0.0, 1.0)


# ---------------------------------------------------------------------------
# model


PARAM_NAMES = ("W", "U", "b", "Wy", "by")


@dataclass
class LstmModel:
    """Gate blocks are stacked in ``GATES`` order: ``W`` is (4H, 6), ``U`` (4H, H), ``b`` (4H,)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    Wy: np.ndarray
    by: np.ndarray
    normalizer: Normalizer | None = None
    context: int = 24

    def __post_init__(self) -> None:
        H = self.hidden_dim
        shapes = {"W": (4 * H, INPUT_DIM), "U": (4 * H, H), "b": (4 * H,), "Wy": (H,), "by": ()}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ModelError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} has non-finite entries")
            setattr(self, name, arr)
        if self.context < 1:
            raise ModelError("context window must be >= 1")

    @property
    def hidden_dim(self) -> int:
        return int(np.asarray(self.U).shape[1])

    @property
    def norm(self) -> Normalizer:
        return self.normalizer or IDENTITY

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W, U, b)`` slices of one gate."""
        H = self.hidden_dim
        k = GATES.index(name)
        rows = slice(k * H, (k + 1) * H)
        return self.W[rows], self.U[rows], self.b[rows]

    def copy(self, **changes) -> LstmModel:
        fields_ = {k: v.copy() for k, v in self.params().items()}
        fields_.update(normalizer=self.normalizer, context=self.context)
        fields_.update(changes)
        return LstmModel(**fields_)

    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())


def init_model(hidden_dim: int = 32, seed: int = 0, normalizer: Normalizer | None = None,
               context: int = 24) -> LstmModel:
    rng = np.random.default_rng(seed)
    H = hidden_dim
    k = 1.0 / math.sqrt(H)
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0  # forget-gate bias
    return LstmModel(
        W=rng.uniform(-k, k, (4 * H, INPUT_DIM)),
        U=rng.uniform(-k, k, (4 * H, H)),
        b=b,
        Wy=rng.uniform(-k, k, H),
        by=np.array(0.0),
        normalizer=normalizer,
        context=context,
    )


def zero_model(hidden_dim: int = 32, normalizer: Normalizer | None = None, by: float = 0.0) -> LstmModel:
    H = hidden_dim
    return LstmModel(np.zeros((4 * H, INPUT_DIM)), np.zeros((4 * H, H)), np.zeros(4 * H),
                     np.zeros(H), np.array(float(by)), normalizer)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Cache(NamedTuple):
    xs: np.ndarray       # (T, B, D)
    hs: np.ndarray       # (T+1, B, H), hs[0] = 0
    cs: np.ndarray       # (T+1, B, H)
    gates: np.ndarray    # (T, B, 4H) post-activation
    y: np.ndarray        # (B,) normalised prediction


def _forward(p: dict[str, np.ndarray], X: np.ndarray) -> Cache:
    """``X`` is normalised input of shape (B, T, D)."""
    B, T, _ = X.shape
    H = p["U"].shape[1]
    xs = np.transpose(X, (1, 0, 2))
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    xw = xs @ p["W"].T + p["b"]
    UT = p["U"].T
    for t in range(T):
        z = xw[t] + hs[t] @ UT
        a = gates[t]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        cs[t + 1] = a[:, H : 2 * H] * cs[t] + a[:, :H] * a[:, 3 * H :]
        hs[t + 1] = a[:, 2 * H : 3 * H] * np.tanh(cs[t + 1])
    y = hs[T] @ p["Wy"] + p["by"]
    return Cache(xs, hs, cs, gates, y)


def _backward(p: dict[str, np.ndarray], cache: Cache, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a loss whose derivative w.r.t. the normalised outputs is ``dy``."""
    xs, hs, cs, gates, _ = cache
    T = xs.shape[0]
    H = p["U"].shape[1]
    g = {k: np.zeros_like(v) for k, v in p.items()}
    g["Wy"] = hs[T].T @ dy
    g["by"] = np.asarray(dy.sum())
    dh = np.outer(dy, p["Wy"])
    dc = np.zeros_like(dh)
    dz = np.empty_like(gates[0])
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, cand = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - cand * cand)
        g["W"] += dz.T @ xs[t]
        g["U"] += dz.T @ hs[t]
        g["b"] += dz.sum(0)
        dh = dz @ p["U"]
        dc = dc * f
    return g


def _as_batch(model: LstmModel, sequence) -> np.ndarray:
    """Normalised (B, T, D) input from feature vectors or raw arrays."""
    if isinstance(sequence, np.ndarray):
        X = sequence if sequence.ndim == 3 else sequence[None]
        if X.shape[-1] != INPUT_DIM:
            raise ModelError(f"expected {INPUT_DIM} features, got {X.shape[-1]}")
        if X.shape[1] == 0:
            raise ModelError("empty sequence")
        return model.norm.features(X)
    seq = list(sequence)
    if not seq:
        raise ModelError("empty sequence")
    if all(v.normalized is not None for v in seq):
        Z = np.array([v.normalized for v in seq], dtype=float)
        if Z.shape[1] != INPUT_DIM:
            raise ModelError(f"expected {INPUT_DIM} features, got {Z.shape[1]}")
        return Z[None]
    return model.norm.features(as_matrix(seq))[None]


def lstm_forward(model: LstmModel, sequence) -> tuple[float | np.ndarray, Cache]:
    """Prediction in vehicles for one sequence (or a raw (B, T, 6) batch) plus the cache."""
    X = _as_batch(model, sequence)
    cache = _forward(model.params(), X)
    pred = model.norm.target_inverse(cache.y)
    if isinstance(sequence, np.ndarray) and sequence.ndim == 3:
        return pred, cache
    return float(pred[0]), cache


# ---------------------------------------------------------------------------
# datasets


def make_dataset(counts: Sequence[float], timestamps: Sequence[datetime],
                 context: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Raw sliding-window samples: ``X`` (N, context, 6) and next-hour targets ``y`` (N,)."""
    feats = as_matrix(build_features(counts, timestamps))  # row t-1 is the vector of hour t
    n = len(counts)
    idx = list(range(context, n))
    if not idx:
        return np.empty((0, context, INPUT_DIM)), np.empty(0)
    X = np.stack([feats[t - context : t] for t in idx])
    y = np.asarray([counts[t] for t in idx], dtype=float)
    return X, y


def concat_datasets(parts: Iterable[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    parts = [p for p in parts if len(p[1])]
    if not parts:
        raise ValueError("no samples")
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        return np.asarray(dataset[0], dtype=float), np.asarray(dataset[1], dtype=float)
    pairs = list(dataset)
    if not pairs:
        return np.empty((0, 0, INPUT_DIM)), np.empty(0)
    X = np.stack([as_matrix(seq) for seq, _ in pairs])
    y = np.asarray([t for _, t in pairs], dtype=float)
    return X, y


# ---------------------------------------------------------------------------
# training


def _loss_and_grads(model: LstmModel, Z: np.ndarray, yz: np.ndarray):
    p = model.params()
    cache = _forward(p, Z)
    err = cache.y - yz
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported by the caller
        loss = float(np.mean(err * err))
    grads = _backward(p, cache, 2.0 * err / err.size)
    return loss, grads


def train(
    model: LstmModel,
    dataset,
    epochs: int,
    learning_rate: float,
    clip_norm: float = 5.0,
    momentum: float = 0.0,
) -> tuple[LstmModel, list[float]]:
    """Full-batch gradient descent with BPTT; returns a trained copy and per-epoch loss.

    ``dataset`` is either ``(X_raw, y_raw)`` arrays or ``(sequence, target)`` pairs.
    A model without normalisation constants gets them fitted from ``dataset``.
    Each history entry is the loss at the start of that epoch.
    """
    X, y = _as_arrays(dataset)
    if y.size == 0:
        raise ValueError("dataset is empty")
    if not learning_rate >= 0 or not math.isfinite(learning_rate):
        raise ValueError(f"learning rate must be finite and >= 0, got {learning_rate}")
    if epochs <= 0:
        return model, []
    if model.normalizer is None:
        model = model.copy(normalizer=Normalizer.fit(X, y))
    else:
        model = model.copy()
    Z = model.norm.features(X)
    yz = model.norm.target(y)
    velocity = {k: np.zeros_like(v) for k, v in model.params().items()}
    history: list[float] = []
    for epoch in range(epochs):
        loss, grads = _loss_and_grads(model, Z, yz)
        if not math.isfinite(loss):
            raise DivergenceError(epoch, loss)
        history.append(loss)
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = clip_norm / total if total > clip_norm else 1.0
        for k, g in grads.items():
            velocity[k] = momentum * velocity[k] - learning_rate * scale * g
            setattr(model, k, getattr(model, k) + velocity[k])
    return model, history


def training_loss(model: LstmModel, dataset) -> float:
    X, y = _as_arrays(dataset)
    cache = _forward(model.params(), model.norm.features(X))
    err = cache.y - model.norm.target(y)
    return float(np.mean(err * err))


def gradient_check(model: LstmModel, sample, step: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest relative gap between backprop and central differences over all parameters.

    Entries where both gradients are below ``floor`` are compared by absolute error.
    """
    seq, target = sample
    Z = _as_batch(model, seq)
    yz = model.norm.target(np.atleast_1d(np.asarray(target, dtype=float)))
    _, analytic = _loss_and_grads(model, Z, yz)
    p = {k: v.copy() for k, v in model.params().items()}

    def loss() -> float:
        err = _forward(p, Z).y - yz
        return float(np.mean(err * err))

    worst = 0.0
    for name, arr in p.items():
        flat = arr.reshape(-1)
        ana = np.asarray(analytic[name]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss()
            flat[j] = orig - step
            down = loss()
            flat[j] = orig
            num = (up - down) / (2 * step)
            scale = max(abs(num), abs(ana[j]))
            err = abs(num - ana[j]) if scale < floor else abs(num - ana[j]) / scale
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# forecasting


class ForecastResult(NamedTuple):
    predictions: tuple[float, ...]
    mse: float | None = None
    rmse: float | None = None

    @property
    def horizon(self) -> tuple[float, ...]:
        return self.predictions


def evaluate(predictions: Sequence[float], truth: Sequence[float]) -> tuple[float, float]:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions but {t.size} truth values")
    if p.size == 0:
        raise ValueError("nothing to evaluate")
    mse = float(np.mean((p - t) ** 2))
    return mse, math.sqrt(mse)


def rollout(model: LstmModel, X: np.ndarray, start: datetime, steps: int = 12) -> np.ndarray:
    """Autoregressive forecasts for a raw (B, T, 6) batch whose last rows query ``start``.

    Returns (B, steps), clamped at zero vehicles.
    """
    window = np.array(X[:, -model.context :, :], dtype=float)
    B = window.shape[0]
    out = np.empty((B, steps))
    ts = start
    for k in range(steps):
        pred, _ = lstm_forward(model, window)
        out[:, k] = np.maximum(pred, 0.0)
        ts = ts + HOUR
        nxt = np.tile([0.0, ts.year, ts.month, ts.day, ts.hour, ts.minute], (B, 1))
        nxt[:, 0] = out[:, k]
        window = np.concatenate([window[:, 1:], nxt[:, None, :]], axis=1)
    return out


def predict_horizon(
    model: LstmModel,
    history: Sequence[FeatureVector],
    start_timestamp: datetime,
    steps: int = 12,
    truth: Sequence[float] | None = None,
) -> ForecastResult:
    """Forecast ``steps`` hours from ``start_timestamp``.

    ``history`` ends with the query vector of ``start_timestamp`` (its
    ``count_last_hour`` is the count observed in the hour before); see
    :func:`query_history`.
    """
    if len(history) < model.context:
        raise ValueError(f"need {model.context} hours of history, got {len(history)}")
    if history[-1].timestamp != start_timestamp:
        raise ValueError(
            f"history ends at {history[-1].timestamp}, expected the query hour {start_timestamp}"
        )
    X = as_matrix(history[-model.context :])[None]
    preds = tuple(rollout(model, X, start_timestamp, steps)[0].tolist())
    if truth is None:
        return ForecastResult(preds)
    mse, rmse = evaluate(preds, truth)
    return ForecastResult(preds, mse, rmse)


def persistence(last_count: float, steps: int = 12) -> list[float]:
    return [float(last_count)] * steps


# ---------------------------------------------------------------------------
# files


def model_to_dict(model: LstmModel) -> dict:
    norm = model.norm
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "input_dim": INPUT_DIM,
        "hidden_dim": model.hidden_dim,
        "context": model.context,
        "features": list(FEATURES),
        "gate_order": list(GATES),
        "W": model.W.reshape(-1).tolist(),
        "U": model.U.reshape(-1).tolist(),
        "b": model.b.tolist(),
        "Wy": model.Wy.tolist(),
        "by": float(model.by),
        "normalization": {
            "feature_min": list(norm.feature_min),
            "feature_max": list(norm.feature_max),
            "target_min": norm.target_min,
            "target_max": norm.target_max,
        },
    }


def model_from_dict(doc: dict) -> LstmModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"not a {MODEL_FORMAT} document")
    if doc.get("input_dim") != INPUT_DIM:
        raise ModelError(f"input_dim must be {INPUT_DIM}")
    H = int(doc["hidden_dim"])
    nm = doc["normalization"]
    try:
        return LstmModel(
            W=np.asarray(doc["W"], dtype=float).reshape(4 * H, INPUT_DIM),
            U=np.asarray(doc["U"], dtype=float).reshape(4 * H, H),
            b=np.asarray(doc["b"], dtype=float),
            Wy=np.asarray(doc["Wy"], dtype=float),
            by=np.asarray(doc["by"], dtype=float),
            normalizer=Normalizer(tuple(nm["feature_min"]), tuple(nm["feature_max"]),
                                  float(nm["target_min"]), float(nm["target_max"])),
            context=int(doc.get("context", 24)),
        )
    except ValueError as exc:
        raise ModelError(str(exc)) from None


def save_model(model: LstmModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path: str | Path) -> LstmModel:
    return model_from_dict(json.loads(Path(path).read_text()))


TIME_FORMAT = "%Y-%m-%dT%H:%M"


def write_counts_csv(path: str | Path, series: dict[str, tuple[Sequence[datetime], Sequence[float]]]) -> None:
    """CSV with columns ``timestamp,count,series``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "count", "series"])
        for name, (stamps, counts) in series.items():
            for ts, c in zip(stamps, counts):
                w.writerow([ts.strftime(TIME_FORMAT), f"{c:g}", name])


def read_counts_csv(path: str | Path) -> dict[str, tuple[list[datetime], list[float]]]:
    """Hourly counts keyed by series; files without a ``series`` column hold one series."""
    out: dict[str, tuple[list[datetime], list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "count"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns timestamp,count[,series]")
        for line, row in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(row["timestamp"])
                count = float(row["count"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            stamps, counts = out.setdefault(row.get("series") or "0", ([], []))
            stamps.append(ts)
            counts.append(count)
    return out


def dataset_from_series(series: dict[str, tuple[Sequence[datetime], Sequence[float]]],
                        context: int = 24) -> tuple[np.ndarray, np.ndarray]:
    return concat_datasets(make_dataset(c, s, context) for s, c in series.values())


def seasonal_counts(days: int, peak: float = 60.0, seed: int = 0,
                    start: datetime = datetime(2017, 1, 1), peak_hour: int = 17
                    ) -> tuple[list[datetime], list[float]]:
    """Hourly Poisson counts around a daily sinusoid ranging from 0 to ``peak`` veh/h."""
    rng = np.random.default_rng(seed)
    hours = np.arange(days * 24)
    rate = 0.5 * peak * (1.0 + np.cos(2 * np.pi * (hours - peak_hour) / 24.0))
    counts = rng.poisson(rate).astype(float).tolist()
    return [start + k * HOUR for k in range(days * 24)], counts
