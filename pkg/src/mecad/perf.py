"""Closed-form throughput and detection-latency model.

All times are seconds and all rates are flows (or features) per second.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BackendProfile:
    """Batch-size to evaluation-time curve of one compute backend.

    ``anchors`` are ``(batch_size, t_ev)`` points. Between anchors the curve
    is linear in log-log space; outside them the per-item cost of the
    nearest anchor is held constant.
    """

    name: str
    anchors: tuple[tuple[int, float], ...]
    max_batch: int

    def __post_init__(self):
        anchors = tuple((int(b), float(t)) for b, t in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        if not anchors:
            raise ValueError(f"profile {self.name!r} needs at least one anchor")
        sizes = [b for b, _ in anchors]
        if any(b < 1 for b in sizes) or any(b2 <= b1 for b1, b2 in zip(sizes, sizes[1:])):
            raise ValueError(f"profile {self.name!r}: anchor batch sizes must be positive and strictly increasing")
        if any(not (math.isfinite(t) and t > 0) for _, t in anchors):
            raise ValueError(f"profile {self.name!r}: t_ev must be finite and positive")
        if self.max_batch < 1:
            raise ValueError(f"profile {self.name!r}: max_batch must be positive")

    @property
    def best_batch(self) -> int:
        """Largest anchored batch size not exceeding ``max_batch``."""
        return max(b for b, _ in self.anchors if b <= self.max_batch)

    @classmethod
    def from_dict(cls, d: dict) -> "BackendProfile":
        return cls(d["name"], tuple(tuple(a) for a in d["anchors"]), int(d["max_batch"]))

    def to_dict(self) -> dict:
        return {"name": self.name, "max_batch": self.max_batch,
                "anchors": [list(a) for a in self.anchors]}


CPU_TF = BackendProfile("cpu-tf", ((16384, 0.0194),), max_batch=262144)
GPU_CAFFE2 = BackendProfile("gpu-caffe2", ((262144, 0.060),), max_batch=1048576)
DEFAULT_PROFILES = {p.name: p for p in (CPU_TF, GPU_CAFFE2)}


@dataclass(frozen=True)
class PipelineConfig:
    profile: BackendProfile
    batch_size: int
    offset: int = 1
    t_limit: float = 5.0

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.profile.max_batch:
            raise ValueError(
                f"batch_size {self.batch_size} outside [1, {self.profile.max_batch}] for {self.profile.name}")
        if self.offset < 1:
            raise ValueError("offset must be >= 1")
        if not self.t_limit > 0:
            raise ValueError("t_limit must be positive")


def t_ev_lookup(profile: BackendProfile, batch_size: int) -> float:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > profile.max_batch:
        raise ValueError(f"batch_size {batch_size} exceeds max_batch {profile.max_batch} of {profile.name}")
    sizes = [b for b, _ in profile.anchors]
    i = bisect.bisect_left(sizes, batch_size)
    if i < len(sizes) and sizes[i] == batch_size:
        return profile.anchors[i][1]
    if i == 0:
        b0, t0 = profile.anchors[0]
        return t0 * batch_size / b0
    if i == len(sizes):
        b0, t0 = profile.anchors[-1]
        return t0 * batch_size / b0
    (b0, t0), (b1, t1) = profile.anchors[i - 1], profile.anchors[i]
    frac = (math.log(batch_size) - math.log(b0)) / (math.log(b1) - math.log(b0))
    return math.exp(math.log(t0) + frac * (math.log(t1) - math.log(t0)))


def _check_rate(flow_rate: float) -> None:
    if not flow_rate > 0:
        raise ValueError(f"flow_rate must be positive, got {flow_rate}")


def t_bf(offset: int, flow_rate: float) -> float:
    """Mean time between consecutive feature vectors."""
    _check_rate(flow_rate)
    if offset < 1:
        raise ValueError("offset must be >= 1")
    return offset / flow_rate


def t_fill(config: PipelineConfig, flow_rate: float) -> float:
    """Time to fill one batch, capped at the collection limit."""
    return min(config.t_limit, config.batch_size * t_bf(config.offset, flow_rate))


def t_ev(config: PipelineConfig) -> float:
    return t_ev_lookup(config.profile, config.batch_size)


def _effective_t_bf(config: PipelineConfig, flow_rate: float) -> float:
    # a feature gap longer than the flush limit cannot delay detection past it
    return min(t_bf(config.offset, flow_rate), t_fill(config, flow_rate))


def detection_time_bounds(config: PipelineConfig, flow_rate: float) -> tuple[float, float]:
    ev = t_ev(config)
    return _effective_t_bf(config, flow_rate) + ev, t_fill(config, flow_rate) + ev


def mean_detection_time(config: PipelineConfig, flow_rate: float) -> float:
    """Expected lag when the anomaly is equally likely at any batch position."""
    return (_effective_t_bf(config, flow_rate) + t_fill(config, flow_rate)) / 2 + t_ev(config)


def max_sustainable_rate(config: PipelineConfig) -> float:
    """Flow rate at which the batch fills exactly as fast as it is evaluated."""
    return config.batch_size * config.offset / t_ev(config)


def feature_capacity(config: PipelineConfig) -> float:
    """Features per second the backend can evaluate at this batch size."""
    return config.batch_size / t_ev(config)


def simulate_detection_lags(config: PipelineConfig, flow_rate: float, trials: int = 10_000,
                            seed: int = 0) -> np.ndarray:
    """Monte-Carlo detection lags from a Poisson flow-arrival simulation.

    Each trial replays one batch cycle: flows arrive as a Poisson stream,
    every ``offset`` flows yield a feature, and the batch closes when it holds
    ``batch_size`` features or when ``t_limit`` expires. The anomalous flow is
    drawn uniformly among the flows feeding the batch; its lag runs from the
    start of its own inter-arrival gap to the end of batch evaluation. Sums of
    exponential gaps are drawn as gamma variates, so cost does not grow with
    the batch size.
    """
    _check_rate(flow_rate)
    rng = np.random.default_rng(seed)
    B, o = config.batch_size, config.offset
    n_flows = B * o
    scale = 1.0 / flow_rate
    j = rng.integers(1, n_flows + 1, trials)
    before = np.where(j > 1, rng.gamma(np.maximum(j - 1, 1), scale), 0.0)
    gap = rng.exponential(scale, trials)
    rest = n_flows - j
    after = np.where(rest > 0, rng.gamma(np.maximum(rest, 1), scale), 0.0)
    lags = gap + after + t_ev(config)
    forced = before + gap + after > config.t_limit
    nf = int(forced.sum())
    if nf:
        # a forced cycle holds a Poisson number of flows spread uniformly over t_limit
        arrival = rng.uniform(0.0, config.t_limit, nf)
        g = rng.exponential(scale, nf)
        n_feat = np.clip(rng.poisson(config.t_limit * flow_rate, nf) // o, 1, B)
        ev = np.array([t_ev_lookup(config.profile, int(n)) for n in n_feat])
        lags[forced] = config.t_limit - arrival + g + ev
    return lags


def rate_table(profile: BackendProfile, batch_size: int, offset: int, rates: Sequence[float],
               t_limit: float = 5.0) -> list[dict]:
    """Per-rate summary rows used by the estimator and reports."""
    cfg = PipelineConfig(profile, batch_size, offset, t_limit)
    rows = []
    for r in rates:
        lo, hi = detection_time_bounds(cfg, r)
        rows.append({"flow_rate": r, "t_bf": t_bf(offset, r), "t_fill": t_fill(cfg, r),
                     "t_ev": t_ev(cfg), "t_det_lower": lo, "t_det_upper": hi,
                     "mean_detection_time": mean_detection_time(cfg, r),
                     "sustainable": r <= max_sustainable_rate(cfg)})
    return rows
