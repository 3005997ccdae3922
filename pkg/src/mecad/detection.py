"""Symptom detection (feedforward classifier) and symptom-sequence aggregation.

The per-RAN detector is a small ReLU network with a single sigmoid output,
trained with mini-batch gradient descent on binary cross-entropy. Symptoms it
raises are merged across RANs into one time-ordered stream and scored by a
pluggable sequence detector.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol as TypingProtocol, Sequence

import numpy as np

from .flows import FeatureBatch, FeatureVector, Label

MODEL_FORMAT = "mecad-model"
MODEL_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass
class NeuralNet:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    threshold: float = 0.5
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in order W0, b0, W1, b1, ... (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NeuralNet":
        return NeuralNet(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.seed, self.threshold)


def init_network(layer_sizes: Sequence[int], seed: int = 0) -> NeuralNet:
    """He-initialised weights (scaled by fan-in), zero biases."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ValueError(f"invalid layer sizes {list(layer_sizes)}")
    if sizes[-1] != 1:
        raise ValueError("output layer must have exactly one unit")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NeuralNet(tuple(sizes), weights, biases, seed)


def _as_matrix(net: NeuralNet, batch) -> np.ndarray:
    if isinstance(batch, FeatureBatch):
        x = batch.matrix()
    elif isinstance(batch, np.ndarray):
        x = np.atleast_2d(batch)
    else:
        x = np.vstack([fv.values for fv in batch]) if len(batch) else np.zeros((0, net.input_size))
    if x.shape[1] != net.input_size:
        raise ValueError(f"input width {x.shape[1]} does not match network input {net.input_size}")
    return x


def _logits(net: NeuralNet, x: np.ndarray) -> np.ndarray:
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
    return a[:, 0]


def forward(net: NeuralNet, batch) -> np.ndarray:
    """Anomaly scores in [0, 1], one per input vector."""
    return _sigmoid(_logits(net, _as_matrix(net, batch)))


class AnomalyType(str, enum.Enum):
    BINARY = "BINARY"


@dataclass(frozen=True)
class Symptom:
    feature: FeatureVector
    timestamp: float
    ran_id: str
    score: float
    anomaly_type: AnomalyType = AnomalyType.BINARY
    detected_at: float | None = None


def classify_batch(net: NeuralNet, batch, threshold: float | None = None,
                   now: float | None = None) -> list[Symptom]:
    """Symptoms for every vector scoring at or above ``threshold``."""
    threshold = net.threshold if threshold is None else threshold
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    vectors = batch.vectors if isinstance(batch, FeatureBatch) else list(batch)
    scores = forward(net, vectors)
    return [Symptom(fv, fv.window_end, fv.ran_id, float(s), detected_at=now)
            for fv, s in zip(vectors, scores) if s >= threshold]


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.01
    dropout: float = 0.0
    l2: float = 0.0
    epochs: int = 50
    threshold: float = 0.5
    batch_size: int = 32

    def __post_init__(self):
        # zero is allowed so a frozen-parameter epoch can be run
        if not (self.learning_rate == 0.0 or 0.001 <= self.learning_rate <= 0.5):
            raise ValueError("learning_rate must be 0 or lie in [0.001, 0.5]")
        if not 0.0 <= self.dropout <= 0.4:
            raise ValueError("dropout must lie in [0, 0.4]")
        if not 0.0 <= self.l2 <= 0.2:
            raise ValueError("l2 must lie in [0, 0.2]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


def loss_and_gradients(net: NeuralNet, x: np.ndarray, y: np.ndarray, l2: float = 0.0,
                       dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Mean cross-entropy plus ``l2/2 * sum(W**2)`` and its gradients.

    Gradients are returned in :meth:`NeuralNet.params` order. Dropout masks
    hidden activations (inverted scaling) when ``dropout > 0``.
    """
    n = x.shape[0]
    acts, pre, masks = [x], [], []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        if i == last:
            a = z
        else:
            a = np.maximum(z, 0.0)
            if dropout > 0:
                m = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
                a = a * m
                masks.append(m)
            else:
                masks.append(None)
        acts.append(a)
    logits = a[:, 0]
    loss = float(np.mean(_softplus(logits) - y * logits))
    loss += 0.5 * l2 * sum(float((w * w).sum()) for w in net.weights)

    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    delta = ((_sigmoid(logits) - y) / n)[:, None]
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta + l2 * net.weights[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return loss, grads


def dataset_loss(net: NeuralNet, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    logits = _logits(net, x)
    loss = float(np.mean(_softplus(logits) - y * logits))
    return loss + 0.5 * l2 * sum(float((w * w).sum()) for w in net.weights)


def to_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(X, y)`` or a sequence of labelled feature vectors."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x, y = dataset
        return np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    vectors = list(dataset)
    x = np.vstack([fv.values for fv in vectors])
    y = np.array([1.0 if fv.truth_label is Label.ANOMALOUS else 0.0 for fv in vectors])
    return x, y


def train_epoch(net: NeuralNet, dataset, hp: Hyperparams) -> float:
    """One pass of shuffled mini-batch descent; returns the loss before the pass."""
    x, y = to_arrays(dataset)
    if len(y) == 0:
        raise ValueError("empty training set")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    x = _as_matrix(net, x)
    loss = dataset_loss(net, x, y, hp.l2)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    if hp.learning_rate == 0:
        return loss
    order = net.rng.permutation(len(y))
    params = net.params()
    for start in range(0, len(y), hp.batch_size):
        idx = order[start:start + hp.batch_size]
        _, grads = loss_and_gradients(net, x[idx], y[idx], hp.l2, hp.dropout, net.rng)
        for p, g in zip(params, grads):
            p -= hp.learning_rate * g
    return loss


def fit(net: NeuralNet, dataset, hp: Hyperparams) -> list[float]:
    """Run ``hp.epochs`` epochs; returns the per-epoch losses."""
    data = to_arrays(dataset)
    losses = [train_epoch(net, data, hp) for _ in range(hp.epochs)]
    net.threshold = hp.threshold
    return losses


def fold_standardization(net: NeuralNet, mean: np.ndarray, std: np.ndarray) -> NeuralNet:
    """Network equivalent to ``net`` applied to ``(x - mean) / std``."""
    std = np.where(std > 0, std, 1.0)
    out = net.copy()
    w0 = net.weights[0] / std[:, None]
    out.weights[0] = w0
    out.biases[0] = net.biases[0] - mean @ w0
    return out


def make_separable_dataset(n: int, dim: int = 288, seed: int = 0, separation: float = 8.0,
                           anomalous_fraction: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian clouds split along a random direction ``separation`` sigmas apart."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    y = (rng.random(n) < anomalous_fraction).astype(float)
    x = rng.normal(size=(n, dim))
    x += np.outer(y - 0.5, direction) * separation
    return x, y


@dataclass(frozen=True)
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def precision_recall(predictions: Sequence, truths: Sequence) -> ClassMetrics:
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    p = np.asarray(predictions, dtype=bool)
    t = np.asarray(truths, dtype=bool)
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    tn = int((~p & ~t).sum())
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return ClassMetrics(tp, fp, fn, tn, precision, recall, f1_score(precision, recall))


class StreamOrderError(ValueError):
    """An input symptom stream is not sorted by timestamp."""


def merge_symptom_streams(streams: Mapping[str, Sequence[Symptom]] | Iterable[Sequence[Symptom]]
                          ) -> list[Symptom]:
    """k-way merge by timestamp; ties go to the lower ran_id, then input order."""
    seqs = list(streams.values()) if isinstance(streams, Mapping) else list(streams)
    keyed = []
    for si, seq in enumerate(seqs):
        prev = -math.inf
        items = []
        for pos, s in enumerate(seq):
            if s.timestamp < prev:
                raise StreamOrderError(f"stream {si} goes back in time at position {pos}")
            prev = s.timestamp
            items.append(((s.timestamp, s.ran_id, si, pos), s))
        keyed.append(items)
    return [s for _, s in heapq.merge(*keyed, key=lambda kv: kv[0])]


@dataclass(frozen=True)
class NetworkAnomaly:
    anomaly_type: str
    ran_ids: tuple[str, ...]
    window: tuple[float, float]
    count: int = 0


class SequenceDetector(TypingProtocol):
    horizon: float

    def __call__(self, window: Sequence[Symptom]) -> NetworkAnomaly | None: ...


@dataclass
class CountThresholdDetector:
    """Fires when one RAN produces ``k`` symptoms within ``horizon`` seconds."""

    k: int = 3
    horizon: float = 10.0
    anomaly_type: str = "SUSPICIOUS_CC"

    def __call__(self, window: Sequence[Symptom]) -> NetworkAnomaly | None:
        by_ran: dict[str, list[float]] = {}
        for s in window:
            by_ran.setdefault(s.ran_id, []).append(s.timestamp)
        hits, start, end, count = [], math.inf, -math.inf, 0
        for ran in sorted(by_ran):
            ts = sorted(by_ran[ran])
            lo = 0
            best = None
            for hi in range(len(ts)):
                while ts[hi] - ts[lo] > self.horizon:
                    lo += 1
                if hi - lo + 1 >= self.k:
                    best = (ts[lo], ts[hi], hi - lo + 1)
            if best:
                hits.append(ran)
                start, end = min(start, best[0]), max(end, best[1])
                count += best[2]
        if not hits:
            return None
        return NetworkAnomaly(self.anomaly_type, tuple(hits), (start, end), count)


def score_sequence(window: Sequence[Symptom], detector: SequenceDetector) -> NetworkAnomaly | None:
    return detector(window)


class NadAggregator:
    """Collects per-RAN symptom streams and scores the merged sequence."""

    def __init__(self, detector: SequenceDetector | None = None):
        self.detector = detector or CountThresholdDetector()
        self._pending: dict[str, list[Symptom]] = {}
        self.history: list[Symptom] = []
        self.anomalies: list[tuple[float, NetworkAnomaly]] = []
        self.received = 0

    def receive(self, symptoms: Iterable[Symptom]) -> None:
        for s in symptoms:
            self._pending.setdefault(s.ran_id, []).append(s)
            self.received += 1

    def score(self, now: float) -> NetworkAnomaly | None:
        """Merge what arrived since the last call and score the recent horizon."""
        streams = {ran: sorted(v, key=lambda s: s.timestamp) for ran, v in self._pending.items()}
        self._pending = {}
        merged = merge_symptom_streams(dict(sorted(streams.items())))
        self.history = sorted(self.history + merged, key=lambda s: (s.timestamp, s.ran_id))
        cutoff = now - self.detector.horizon
        self.history = [s for s in self.history if s.timestamp >= cutoff]
        anomaly = score_sequence(self.history, self.detector)
        if anomaly is not None:
            self.anomalies.append((now, anomaly))
            # consumed symptoms are not re-reported
            self.history = [s for s in self.history if s.ran_id not in anomaly.ran_ids]
        return anomaly


def save_model(net: NeuralNet, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "threshold": net.threshold,
        "seed": net.seed,
        "params": [p.ravel(order="C").tolist() for p in net.params()],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> NeuralNet:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
    sizes = [int(n) for n in doc["layer_sizes"]]
    flat = doc["params"]
    if len(flat) != 2 * (len(sizes) - 1):
        raise ValueError(f"{path}: parameter count does not match layer sizes")
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        weights.append(np.array(flat[2 * i], dtype=float).reshape(a, b))
        biases.append(np.array(flat[2 * i + 1], dtype=float).reshape(b))
    return NeuralNet(tuple(sizes), weights, biases, int(doc.get("seed", 0)), float(doc["threshold"]))
