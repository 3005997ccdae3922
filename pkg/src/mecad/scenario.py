"""Sigmoid traffic ramp, slope estimation and tangent-line load forecasting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AnomalyInjection:
    """Fraction of anomalous flows injected on one RAN over ``[start, end)`` time units."""

    ran_id: str
    start: float
    end: float
    fraction: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("injection end precedes start")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("injection fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ScenarioModel:
    """Single-event flow-rate ramp ``saturation / (1 + exp(-(t - midpoint)))``.

    ``t`` is in model time units; ``time_unit`` converts them to seconds.
    A ``constant_rate`` replaces the ramp with a flat rate.
    """

    saturation: float = 1e7
    midpoint: float = 5.2933
    floor_check: float = 5e4
    duration: float = 12.0
    time_unit: float = 60.0
    sample_period: float = 0.05
    constant_rate: float | None = None
    injections: tuple[AnomalyInjection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.saturation > 0:
            raise ValueError("saturation must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not (self.time_unit > 0 and self.sample_period > 0):
            raise ValueError("time_unit and sample_period must be positive")
        if self.constant_rate is not None and self.constant_rate < 0:
            raise ValueError("constant_rate must be non-negative")

    def to_seconds(self, t_units: float) -> float:
        return t_units * self.time_unit

    def to_units(self, seconds: float) -> float:
        return seconds / self.time_unit

    def anomalous_fraction(self, ran_id: str, t_units: float) -> float:
        frac = 0.0
        for inj in self.injections:
            if inj.ran_id == ran_id and inj.start <= t_units < inj.end:
                frac = max(frac, inj.fraction)
        return frac


def flow_rate_at(model: ScenarioModel, t: float) -> float:
    if model.constant_rate is not None:
        return model.constant_rate
    x = t - model.midpoint
    if x < -700:
        return 0.0
    return model.saturation / (1.0 + math.exp(-x))


def feature_rate_at(model: ScenarioModel, t: float, offset: int) -> float:
    if offset < 1:
        raise ValueError("offset must be >= 1")
    return flow_rate_at(model, t) / offset


def mean_flow_rate(model: ScenarioModel, t0: float, t1: float) -> float:
    """Average of :func:`flow_rate_at` over ``[t0, t1]`` (closed form)."""
    if t1 <= t0:
        return flow_rate_at(model, t0)
    if model.constant_rate is not None:
        return model.constant_rate

    def antiderivative(t):
        x = t - model.midpoint
        # softplus, stable for large |x|
        return model.saturation * (max(x, 0.0) + math.log1p(math.exp(-abs(x))))

    return (antiderivative(t1) - antiderivative(t0)) / (t1 - t0)


@dataclass(frozen=True)
class RateSample:
    t: float
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be non-negative")


def estimate_derivative(samples: Sequence[RateSample], window: int = 5) -> float:
    """Least-squares slope over the last ``window`` samples (rate per unit of ``t``)."""
    recent = list(samples)[-window:]
    t = np.array([s.t for s in recent], dtype=float)
    if len(np.unique(t)) < 2:
        raise ValueError("need at least two samples with distinct times")
    r = np.array([s.rate for s in recent], dtype=float)
    tc = t - t.mean()
    return float((tc * (r - r.mean())).sum() / (tc * tc).sum())


def forecast(current_rate: float, derivative: float, horizon: float) -> float:
    """Tangent-line prediction ``current + derivative * horizon``, floored at zero."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return max(0.0, current_rate + derivative * horizon)
