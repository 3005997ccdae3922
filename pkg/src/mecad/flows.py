"""Flow records, windowed feature extraction and feature batching.

The collector keeps a sliding window of the most recent flows and emits one
feature vector every ``offset`` flows once the window has filled. Feature
vectors are grouped into batches by :class:`FeatureBatcher`, which forces a
partial batch out when the collection time limit expires.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class Protocol(str, enum.Enum):
    TCP = "TCP"
    UDP = "UDP"
    ICMP = "ICMP"
    OTHER = "OTHER"


class Label(str, enum.Enum):
    NORMAL = "NORMAL"
    ANOMALOUS = "ANOMALOUS"


PROTOCOLS = (Protocol.TCP, Protocol.UDP, Protocol.ICMP, Protocol.OTHER)
NUMERIC_FIELDS = ("bytes", "packets", "duration")
STATISTICS = ("mean", "std", "min", "max", "median")
ENTROPY_FIELDS = ("src_port", "dst_port", "src_id", "dst_id")

# numeric stats, then entropies, then protocol fractions; zero padding after
SCHEMA_WIDTH = len(NUMERIC_FIELDS) * len(STATISTICS) + len(ENTROPY_FIELDS) + len(PROTOCOLS)


class FlowOrderError(ValueError):
    """A flow arrived with a timestamp earlier than its predecessor."""


@dataclass(frozen=True, slots=True)
class FlowRecord:
    timestamp: float
    src_id: str
    dst_id: str
    src_port: int
    dst_port: int
    protocol: Protocol
    bytes: int
    packets: int
    duration: float
    label: Label = Label.NORMAL

    def __post_init__(self):
        if not (0 <= self.src_port <= 65535 and 0 <= self.dst_port <= 65535):
            raise ValueError(f"port out of range: {self.src_port}/{self.dst_port}")
        if self.packets < 1:
            raise ValueError(f"packets must be positive, got {self.packets}")
        if self.bytes < self.packets:
            raise ValueError(f"bytes ({self.bytes}) must be >= packets ({self.packets})")
        if self.duration < 0:
            raise ValueError(f"negative duration {self.duration}")


def feature_names(feature_dim: int = 288) -> list[str]:
    """Column names of a feature vector, padding slots included."""
    names = [f"{f}_{s}" for f in NUMERIC_FIELDS for s in STATISTICS]
    names += [f"entropy_{f}" for f in ENTROPY_FIELDS]
    names += [f"proto_{p.value.lower()}" for p in PROTOCOLS]
    names += [f"pad_{i}" for i in range(feature_dim - len(names))]
    return names


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    window_start: float
    window_end: float
    ran_id: str = ""
    truth_label: Label = Label.NORMAL

    def __post_init__(self):
        if self.window_end < self.window_start:
            raise ValueError("window_end precedes window_start")

    @property
    def is_anomalous(self) -> bool:
        return self.truth_label is Label.ANOMALOUS


@dataclass(frozen=True)
class CollectorConfig:
    offset: int = 1
    window_size: int | None = None
    batch_size: int = 16384
    t_limit: float = 5.0
    feature_dim: int = 288

    def __post_init__(self):
        if self.window_size is None:
            object.__setattr__(self, "window_size", self.offset)
        if self.offset < 1:
            raise ValueError("offset must be >= 1")
        if self.window_size < self.offset:
            raise ValueError("window_size must be >= offset")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.t_limit > 0:
            raise ValueError("t_limit must be positive")
        if self.feature_dim < SCHEMA_WIDTH:
            raise ValueError(f"feature_dim must be >= {SCHEMA_WIDTH}")


@dataclass(frozen=True)
class FeatureBatch:
    vectors: tuple[FeatureVector, ...]
    fill_start: float
    fill_end: float
    forced_flush: bool

    def __len__(self) -> int:
        return len(self.vectors)

    def matrix(self) -> np.ndarray:
        return np.vstack([fv.values for fv in self.vectors])


def _entropy(values) -> float:
    _, counts = np.unique(np.asarray(values), return_counts=True)
    if len(counts) == 1:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def compute_features(window: Sequence[FlowRecord], config: CollectorConfig,
                     ran_id: str = "") -> FeatureVector:
    """Summarise a window of flows as a fixed-width feature vector.

    Standard deviations are population deviations and entropies are in bits.
    The vector is labelled anomalous if any flow in the window is.
    """
    if len(window) == 0:
        raise ValueError("cannot compute features over an empty window")
    out = np.zeros(config.feature_dim)
    i = 0
    for name in NUMERIC_FIELDS:
        col = np.array([getattr(f, name) for f in window], dtype=float)
        out[i:i + 5] = (col.mean(), col.std(), col.min(), col.max(), np.median(col))
        i += 5
    for name in ENTROPY_FIELDS:
        out[i] = _entropy([getattr(f, name) for f in window])
        i += 1
    n = len(window)
    for proto in PROTOCOLS:
        out[i] = sum(1 for f in window if f.protocol is proto) / n
        i += 1
    label = Label.ANOMALOUS if any(f.label is Label.ANOMALOUS for f in window) else Label.NORMAL
    return FeatureVector(out, window[0].timestamp, window[-1].timestamp, ran_id, label)


class FlowCollector:
    """Single-writer collector emitting a feature vector every ``offset`` flows."""

    def __init__(self, config: CollectorConfig, ran_id: str = ""):
        self.config = config
        self.ran_id = ran_id
        self._window: deque[FlowRecord] = deque(maxlen=config.window_size)
        self._since_emit = 0
        self.ingested = 0
        self.emitted = 0
        self.last_timestamp = -math.inf

    @property
    def offset(self) -> int:
        return self.config.offset

    def set_offset(self, offset: int) -> None:
        """Change the emission offset; a window tied to the offset follows it."""
        cfg = self.config
        window = offset if cfg.window_size == cfg.offset else max(cfg.window_size, offset)
        self.config = CollectorConfig(offset, window, cfg.batch_size, cfg.t_limit, cfg.feature_dim)
        self._window = deque(self._window, maxlen=window)

    def ingest(self, flow: FlowRecord) -> FeatureVector | None:
        if flow.timestamp < self.last_timestamp:
            raise FlowOrderError(
                f"flow at t={flow.timestamp} precedes last ingested t={self.last_timestamp}")
        self.last_timestamp = flow.timestamp
        self._window.append(flow)
        self.ingested += 1
        w = self.config.window_size
        if self.ingested < w:
            return None
        if self.ingested > w:
            self._since_emit += 1
            if self._since_emit < self.config.offset:
                return None
        self._since_emit = 0
        self.emitted += 1
        return compute_features(list(self._window), self.config, self.ran_id)

    def ingest_count(self, count: int) -> int:
        """Aggregate-mode ingestion: advance by ``count`` flows, return vectors emitted.

        Follows the same counting rule as :meth:`ingest` without materialising
        records, so the window contents are discarded.
        """
        if count < 0:
            raise ValueError("negative flow count")
        emitted = 0
        w = self.config.window_size
        if self.ingested < w:
            need = w - self.ingested
            if count < need:
                self.ingested += count
                return 0
            self.ingested += need
            count -= need
            emitted = 1
            self._since_emit = 0
        total = self._since_emit + count
        k, self._since_emit = divmod(total, self.config.offset)
        self.ingested += count
        self.emitted += emitted + k
        self._window.clear()
        return emitted + k


def expected_emissions(flows: int, window_size: int, offset: int) -> int:
    """Vectors a fixed-offset collector emits after ``flows`` flows."""
    if flows < window_size:
        return 0
    return (flows - window_size) // offset + 1


class FeatureBatcher:
    """Groups feature vectors into evaluation batches with a flush limit."""

    def __init__(self, batch_size: int, t_limit: float = 5.0):
        if batch_size < 1 or not t_limit > 0:
            raise ValueError("batch_size must be >= 1 and t_limit > 0")
        self.batch_size = batch_size
        self.t_limit = t_limit
        self._open: list[FeatureVector] = []
        self.fill_start: float | None = None

    def __len__(self) -> int:
        return len(self._open)

    def _emit(self, end: float, forced: bool) -> FeatureBatch:
        batch = FeatureBatch(tuple(self._open), self.fill_start, end, forced)
        self._open = []
        self.fill_start = None
        return batch

    def flush_due(self, now: float) -> FeatureBatch | None:
        """Force out the open batch if its time limit has expired by ``now``."""
        if self._open and now >= self.fill_start + self.t_limit:
            return self._emit(self.fill_start + self.t_limit, True)
        return None

    def push(self, fv: FeatureVector, now: float) -> list[FeatureBatch]:
        """Add a vector at time ``now``; returns the batches this completes (0 to 2)."""
        if self.fill_start is not None and now < self.fill_start:
            raise ValueError(f"push at {now} precedes batch fill start {self.fill_start}")
        out = []
        expired = self.flush_due(now)
        if expired is not None:
            out.append(expired)
        if not self._open:
            self.fill_start = now
        self._open.append(fv)
        if len(self._open) >= self.batch_size:
            out.append(self._emit(now, False))
        return out

    def resize(self, batch_size: int) -> None:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.batch_size = batch_size


_TRACE_FIELDS = ("timestamp", "src_id", "dst_id", "src_port", "dst_port", "protocol",
                 "bytes", "packets", "duration", "label")


def parse_flow_line(fields: Sequence[str]) -> FlowRecord:
    if len(fields) not in (9, 10):
        raise ValueError(f"expected 9 or 10 fields, got {len(fields)}")
    f = [x.strip() for x in fields]
    return FlowRecord(
        timestamp=float(f[0]), src_id=f[1], dst_id=f[2],
        src_port=int(f[3]), dst_port=int(f[4]), protocol=Protocol(f[5].upper()),
        bytes=int(f[6]), packets=int(f[7]), duration=float(f[8]),
        label=Label(f[9].upper()) if len(f) == 10 and f[9] else Label.NORMAL,
    )


def read_flow_trace(path: str | Path) -> Iterator[FlowRecord]:
    """Yield flows from a comma-separated trace; ``#`` lines are comments."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                yield parse_flow_line(row)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None


def write_flow_trace(path: str | Path, flows: Iterable[FlowRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + ",".join(_TRACE_FIELDS) + "\n")
        w = csv.writer(fh)
        for fl in flows:
            w.writerow([repr(fl.timestamp), fl.src_id, fl.dst_id, fl.src_port, fl.dst_port,
                        fl.protocol.value, fl.bytes, fl.packets, repr(fl.duration), fl.label.value])


@dataclass
class FlowGenerator:
    """Synthetic flow source: background traffic plus C&C-style beacons.

    Normal flows are short and bulky; anomalous flows are long-lived,
    low-volume TCP sessions from a small bot population to one server.
    """

    rng: np.random.Generator
    n_hosts: int = 500
    n_servers: int = 40
    n_bots: int = 8
    services: tuple[int, ...] = (80, 443, 53, 25, 22, 8080, 993, 123)
    cc_port: int = 6667
    _protocols: tuple = field(default=(Protocol.TCP, Protocol.UDP, Protocol.ICMP), repr=False)

    def generate(self, n: int, t0: float, t1: float,
                 anomalous_fraction: float = 0.0) -> list[FlowRecord]:
        """``n`` flows with sorted uniform timestamps in ``[t0, t1)``."""
        if n <= 0:
            return []
        rng = self.rng
        ts = np.sort(rng.uniform(t0, t1, n))
        bad = rng.random(n) < anomalous_fraction
        proto_idx = rng.choice(3, size=n, p=(0.7, 0.25, 0.05))
        packets = np.maximum(5, np.round(rng.lognormal(3.0, 0.8, n))).astype(int)
        per_pkt = rng.uniform(300, 1400, n)
        duration = rng.exponential(2.0, n)
        src = rng.integers(0, self.n_hosts, n)
        dst = rng.integers(0, self.n_servers, n)
        sport = rng.integers(1024, 65536, n)
        dport = rng.choice(self.services, size=n)
        # beacons
        packets[bad] = rng.integers(2, 5, bad.sum())
        per_pkt[bad] = rng.uniform(60, 120, bad.sum())
        duration[bad] = rng.uniform(30, 90, bad.sum())
        proto_idx[bad] = 0
        src[bad] = rng.integers(0, self.n_bots, bad.sum())
        out = []
        for i in range(n):
            b = bool(bad[i])
            out.append(FlowRecord(
                timestamp=float(ts[i]),
                src_id=f"bot{src[i]}" if b else f"h{src[i]}",
                dst_id="cc0" if b else f"s{dst[i]}",
                src_port=int(sport[i]),
                dst_port=self.cc_port if b else int(dport[i]),
                protocol=self._protocols[proto_idx[i]],
                bytes=int(packets[i] * per_pkt[i]),
                packets=int(packets[i]),
                duration=float(duration[i]),
                label=Label.ANOMALOUS if b else Label.NORMAL,
            ))
        return out

    def windows(self, n: int, window_size: int, t0: float, t1: float,
                anomalous_fraction: float) -> list[list[FlowRecord]]:
        """``n`` independent windows of ``window_size`` flows each."""
        flows = self.generate(n * window_size, t0, t1, anomalous_fraction)
        if not flows:
            return []
        order = self.rng.permutation(len(flows))
        groups = [sorted((flows[j] for j in order[i * window_size:(i + 1) * window_size]),
                         key=lambda fl: fl.timestamp) for i in range(n)]
        return groups
