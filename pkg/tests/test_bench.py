import gc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inpaintq.bench import (
    MB,
    PUBLISHED_SIZES_MB,
    BenchResult,
    ConstantOverhead,
    MockClock,
    fit_constant_overhead,
    latency_table,
    model_size,
    overhead_fit_table,
    peak_memory,
    percent_reduction,
    size_report,
    size_table,
    time_op,
)
from inpaintq.errors import NonPositiveBaseline
from inpaintq.tensor import Tensor


def test_mock_intervals_mean_and_sd():
    r = time_op(lambda: None, warmup=0, runs=3, clock=MockClock([10, 20, 30]))
    assert (r.mean_ms, r.sd_ms, r.runs) == (20.0, 10.0, 3)


def test_constant_interval_has_zero_sd():
    r = time_op(lambda: None, warmup=1, runs=5, clock=MockClock([7.5]))
    assert r.mean_ms == 7.5 and r.sd_ms == 0.0


def test_warmup_not_timed():
    calls = []
    clock = MockClock([10, 20, 30])
    r = time_op(lambda: calls.append(1), warmup=2, runs=3, clock=clock)
    assert len(calls) == 5
    assert clock.calls == 6
    assert r.mean_ms == 20.0


@given(st.lists(st.floats(0.001, 1e4), min_size=1, max_size=30))
def test_timing_statistics_match_closed_form(intervals):
    r = time_op(lambda: None, warmup=0, runs=len(intervals), clock=MockClock(intervals), pin=False)
    arr = np.array(intervals)
    assert r.mean_ms == pytest.approx(arr.mean(), rel=1e-9)
    assert r.sd_ms == pytest.approx(arr.std(ddof=1) if len(arr) > 1 else 0.0, rel=1e-6, abs=1e-6)


def test_time_op_rejects_bad_counts():
    with pytest.raises(ValueError):
        time_op(lambda: None, runs=0)
    with pytest.raises(ValueError):
        BenchResult("x", 1, 1.0, -1.0)


def test_wall_clock_runs():
    r = time_op(lambda: sum(range(1000)), warmup=1, runs=3)
    assert r.mean_ms >= 0 and r.sd_ms >= 0


def _alloc(n):
    return Tensor(np.zeros(n))


def test_single_tensor_peak():
    def op():
        t = _alloc(1000)
        del t

    assert peak_memory(op) == 8000


def test_sequential_tensors_do_not_stack():
    def op():
        a = _alloc(1000)
        del a
        gc.collect()
        b = _alloc(1000)
        del b

    assert peak_memory(op) == 8000


def test_nested_allocations_sum():
    def op():
        a = _alloc(1000)
        b = _alloc(500)
        del b
        c = _alloc(250)
        del a, c

    assert peak_memory(op) == 8000 + 4000


@given(st.integers(1, 2000), st.integers(1, 2000))
def test_peak_monotone_under_extra_live_buffer(n, extra):
    def op():
        t = _alloc(n)
        del t

    def wrapped():
        keep = _alloc(extra)
        op()
        del keep

    assert peak_memory(wrapped) == peak_memory(op) + 8 * extra


def test_untracked_numpy_is_invisible():
    assert peak_memory(lambda: np.zeros(10_000)) == 0


def test_model_sizes():
    assert model_size(10**6, "fp32").total_bytes == 4_000_000
    rep = size_report(12345)
    assert rep["fp32"].payload_bytes / rep["int8"].payload_bytes == 4.0
    assert rep["fp16"].payload_bytes == 2 * 12345
    with pytest.raises(ValueError):
        model_size(0, "fp32")
    with pytest.raises(ValueError):
        model_size(10, "bf16")


def test_constant_overhead_reproduces_observed_ratio():
    f32, _, i8 = PUBLISHED_SIZES_MB["YOLO11(l)"]
    p, c = fit_constant_overhead(f32 * MB, i8 * MB)
    assert p == pytest.approx(22.666667e6, rel=1e-6)
    assert c == pytest.approx(8.133333e6, rel=1e-6)
    rep = size_report(round(p), ConstantOverhead(round(c)))
    assert rep["fp32"].total_bytes / rep["int8"].total_bytes == pytest.approx(f32 / i8, rel=1e-6)
    assert rep["fp32"].payload_bytes / rep["int8"].payload_bytes == 4.0
    with pytest.raises(ValueError):
        fit_constant_overhead(10.0, 20.0)


@pytest.mark.parametrize(
    "base,cand,expected",
    [(16.55, 4.50, 72.8), (16.55, 4.4, 73.4), (6829.98, 3683.45, 46.1), (5.0, 5.0, 0.0), (3.0, 0.0, 100.0)],
)
def test_percent_reduction(base, cand, expected):
    assert percent_reduction(base, cand) == pytest.approx(expected, abs=0.1)


def test_percent_reduction_needs_positive_baseline():
    with pytest.raises(NonPositiveBaseline):
        percent_reduction(0.0, 1.0)


def test_tables():
    res = [BenchResult("fp32", 3, 20.0, 10.0, 8000), BenchResult("int8", 3, 5.0, 1.0, 2000)]
    md = latency_table(res, baseline="fp32")
    assert "| int8 | 5.0000 ± 1.0000 | 2000 | 75.0 | 75.0 |" in md
    csv_text = latency_table(res, baseline="fp32", fmt="csv")
    assert csv_text.splitlines()[2] == "int8,5.0000 ± 1.0000,2000,75.0,75.0"
    st_md = size_table(size_report(1000))
    assert "| int8 | 1000 | 0 | 1000 | 75.0 |" in st_md
    fit = overhead_fit_table()
    assert "| YOLO11(l) | 22.67 | 8.13 | 3.21 | 53.5 | 51.7 |" in fit
    with pytest.raises(ValueError):
        size_table(size_report(10), fmt="html")
