import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecad.perf import (CPU_TF, GPU_CAFFE2, BackendProfile, PipelineConfig, detection_time_bounds,
                        feature_capacity, max_sustainable_rate, mean_detection_time, rate_table,
                        simulate_detection_lags, t_bf, t_ev, t_ev_lookup, t_fill)

CPU = PipelineConfig(CPU_TF, 16384, 1)
GPU = PipelineConfig(GPU_CAFFE2, 262144, 1)


def test_profile_validation():
    with pytest.raises(ValueError):
        BackendProfile("x", (), 10)
    with pytest.raises(ValueError):
        BackendProfile("x", ((8, 0.1), (4, 0.2)), 10)
    with pytest.raises(ValueError):
        BackendProfile("x", ((8, 0.0),), 10)
    with pytest.raises(ValueError):
        BackendProfile("x", ((8, math.inf),), 10)


def test_profile_dict_round_trip():
    p = BackendProfile("multi", ((16, 0.001), (1024, 0.02)), 4096)
    assert BackendProfile.from_dict(p.to_dict()) == p


def test_anchor_values():
    assert t_ev_lookup(CPU_TF, 16384) == 0.0194
    assert t_ev_lookup(GPU_CAFFE2, 262144) == 0.060


def test_single_anchor_extrapolates_per_item():
    assert t_ev_lookup(CPU_TF, 32768) == pytest.approx(2 * 0.0194)
    assert t_ev_lookup(CPU_TF, 8192) == pytest.approx(0.0097)


def test_log_log_interpolation_between_anchors():
    p = BackendProfile("two", ((100, 0.01), (10000, 0.1)), 10000)
    # halfway in log batch size is halfway in log time
    assert t_ev_lookup(p, 1000) == pytest.approx(math.sqrt(0.01 * 0.1))


def test_lookup_rejects_batch_above_max():
    with pytest.raises(ValueError):
        t_ev_lookup(CPU_TF, CPU_TF.max_batch + 1)
    with pytest.raises(ValueError):
        PipelineConfig(CPU_TF, CPU_TF.max_batch + 1)


def test_t_bf_values():
    assert t_bf(1, 842_600) == pytest.approx(1.1868e-6, rel=1e-4)
    assert t_bf(2, 2) == 1.0
    assert t_bf(2, 1000) == 2 * t_bf(1, 1000)
    with pytest.raises(ValueError):
        t_bf(1, 0)


def test_t_fill_values():
    assert t_fill(PipelineConfig(CPU_TF, 16384, 1), 1000) == 5.0
    assert t_fill(CPU, 842_600) == pytest.approx(0.019444, abs=1e-6)
    assert t_fill(GPU, 4_332_000) == pytest.approx(0.06051, abs=1e-5)


def test_bounds_and_mean_at_reference_rate():
    lo, hi = detection_time_bounds(CPU, 842_600)
    assert hi == pytest.approx(16384 / 842_600 + 0.0194)
    assert hi == pytest.approx(0.03884, abs=1e-5)
    assert lo == pytest.approx(1 / 842_600 + 0.0194)
    assert mean_detection_time(CPU, 842_600) == pytest.approx(0.02912, abs=1e-5)


def test_batch_size_one_degenerate():
    cfg = PipelineConfig(CPU_TF, 1, 1)
    lo, hi = detection_time_bounds(cfg, 1000.0)
    assert lo == hi
    assert mean_detection_time(cfg, 1000.0) == t_bf(1, 1000.0) + t_ev(cfg)


def test_sustainable_rates():
    assert max_sustainable_rate(CPU) == pytest.approx(844_536, abs=1)
    assert max_sustainable_rate(GPU) == pytest.approx(4_369_067, abs=1)
    assert max_sustainable_rate(PipelineConfig(GPU_CAFFE2, 262144, 4)) == pytest.approx(1.7476e7, rel=1e-3)
    assert feature_capacity(CPU) == max_sustainable_rate(CPU)


def test_rate_table_rows():
    rows = rate_table(CPU_TF, 16384, 1, [1e5, 1e6])
    assert [r["sustainable"] for r in rows] == [True, False]
    assert rows[0]["t_det_lower"] <= rows[0]["mean_detection_time"] <= rows[0]["t_det_upper"]


configs = st.builds(
    PipelineConfig,
    profile=st.sampled_from([CPU_TF, GPU_CAFFE2]),
    batch_size=st.integers(1, 262144),
    offset=st.integers(1, 16),
    t_limit=st.floats(0.1, 10.0),
)
rates = st.floats(1.0, 1e8)


@settings(max_examples=200)
@given(cfg=configs, r=rates)
def test_bounds_bracket_mean(cfg, r):
    lo, hi = detection_time_bounds(cfg, r)
    assert lo <= mean_detection_time(cfg, r) <= hi
    assert lo <= hi


@settings(max_examples=200)
@given(cfg=configs, r1=rates, r2=rates)
def test_t_fill_monotone_in_rate(cfg, r1, r2):
    lo, hi = sorted((r1, r2))
    assert t_fill(cfg, hi) <= t_fill(cfg, lo)


@settings(max_examples=200)
@given(cfg=configs, r=rates, k=st.integers(1, 8))
def test_t_fill_monotone_in_offset_and_batch(cfg, r, k):
    bigger_offset = PipelineConfig(cfg.profile, cfg.batch_size, cfg.offset * k, cfg.t_limit)
    assert t_fill(bigger_offset, r) >= t_fill(cfg, r)
    bigger_batch = PipelineConfig(cfg.profile, min(cfg.batch_size * k, cfg.profile.max_batch),
                                  cfg.offset, cfg.t_limit)
    assert t_fill(bigger_batch, r) >= t_fill(cfg, r)


@settings(max_examples=200)
@given(cfg=configs, k=st.integers(1, 64))
def test_sustainable_rate_linear_in_offset(cfg, k):
    scaled = PipelineConfig(cfg.profile, cfg.batch_size, cfg.offset * k, cfg.t_limit)
    assert max_sustainable_rate(scaled) == pytest.approx(k * max_sustainable_rate(cfg), rel=1e-12)


@settings(max_examples=200)
@given(cfg=configs)
def test_fill_equals_eval_at_crossover(cfg):
    r = max_sustainable_rate(cfg)
    fill = cfg.batch_size * cfg.offset / r  # unclamped fill time
    assert fill == pytest.approx(t_ev(cfg), rel=1e-9)


def test_monte_carlo_lags_within_bounds():
    lags = simulate_detection_lags(CPU, 1e5, trials=2000, seed=1)
    lo, hi = detection_time_bounds(CPU, 1e5)
    assert lags.shape == (2000,)
    assert np.all(lags > 0)
    assert lags.mean() == pytest.approx(mean_detection_time(CPU, 1e5), rel=0.05)
    assert lags.min() >= lo - 1e-3


def test_monte_carlo_is_seeded():
    a = simulate_detection_lags(GPU, 1e6, trials=500, seed=4)
    b = simulate_detection_lags(GPU, 1e6, trials=500, seed=4)
    assert np.array_equal(a, b)
