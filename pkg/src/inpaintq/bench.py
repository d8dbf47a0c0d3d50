"""Latency, peak-memory and model-size measurement with Markdown/CSV reporting."""
from __future__ import annotations

import contextlib
import csv
import io
import os
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ._alloc import AllocationTracker
from .errors import NonPositiveBaseline

BYTES_PER_ELEMENT = {"fp32": 4, "fp16": 2, "int8": 1}
MB = 1_000_000

# Deployed detector sizes in MB (fp32, fp16, int8) on the edge device.
PUBLISHED_SIZES_MB = {"YOLO11(l)": (98.8, 51.7, 30.8), "RT-DETR(l)": (125.0, 64.6, 47.4)}


def wall_clock_ms() -> float:
    return time.perf_counter_ns() / 1e6


class MockClock:
    """Deterministic clock: the i-th (start, stop) read pair differs by ``intervals[i]``, cycled."""

    def __init__(self, intervals_ms):
        self.intervals = [float(v) for v in intervals_ms]
        if not self.intervals:
            raise ValueError("mock clock needs at least one interval")
        self.t = 0.0
        self.calls = 0

    def __call__(self) -> float:
        if self.calls % 2 == 1:
            self.t += self.intervals[(self.calls // 2) % len(self.intervals)]
        self.calls += 1
        return self.t


@dataclass(frozen=True)
class BenchResult:
    label: str
    runs: int
    mean_ms: float
    sd_ms: float
    peak_bytes: int = 0

    def __post_init__(self):
        if self.runs < 1 or self.sd_ms < 0:
            raise ValueError("runs must be >= 1 and sd nonnegative")


@contextlib.contextmanager
def single_core():
    """Pin the process to one CPU for the duration (no-op where affinity is unsupported)."""
    if not hasattr(os, "sched_setaffinity"):
        yield
        return
    before = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(before)})
    except OSError:
        yield
        return
    try:
        yield
    finally:
        os.sched_setaffinity(0, before)


def time_op(
    op: Callable[[], object],
    warmup: int = 1,
    runs: int = 10,
    clock: Callable[[], float] = wall_clock_ms,
    label: str = "",
    pin: bool = True,
) -> BenchResult:
    """Mean and sample SD of ``runs`` timed calls; ``clock`` reads milliseconds.

    Warmup calls never touch the clock. Each timed call reads it exactly twice.
    """
    if runs < 1 or warmup < 0:
        raise ValueError("runs must be >= 1 and warmup >= 0")
    samples = np.empty(runs)
    with single_core() if pin else contextlib.nullcontext():
        for _ in range(warmup):
            op()
        for i in range(runs):
            t0 = clock()
            op()
            samples[i] = clock() - t0
    sd = float(samples.std(ddof=1)) if runs > 1 else 0.0
    return BenchResult(label, runs, float(samples.mean()), sd)


def peak_memory(op: Callable[[], object]) -> int:
    """High-water mark of live toolkit buffers while ``op`` runs."""
    with AllocationTracker() as t:
        op()
    return t.peak


@dataclass(frozen=True)
class SizeEntry:
    precision: str
    payload_bytes: int
    overhead_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.overhead_bytes


@dataclass(frozen=True)
class ConstantOverhead:
    """Same container overhead (headers, metadata, graph) at every precision."""

    nbytes: int = 0

    def __call__(self, precision: str) -> int:
        return self.nbytes


def fit_constant_overhead(fp32_bytes: float, int8_bytes: float) -> tuple[float, float]:
    """Solve ``4P + c = fp32``, ``P + c = int8`` for (param count P, overhead c)."""
    p = (fp32_bytes - int8_bytes) / 3.0
    c = int8_bytes - p
    if p <= 0 or c < 0:
        raise ValueError("sizes are inconsistent with a constant overhead")
    return p, c


def model_size(param_count: int, precision: str, overhead_model=None) -> SizeEntry:
    if param_count < 1:
        raise ValueError("param_count must be positive")
    if precision not in BYTES_PER_ELEMENT:
        raise ValueError(f"unknown precision {precision!r}")
    overhead = 0 if overhead_model is None else int(overhead_model(precision))
    return SizeEntry(precision, int(param_count) * BYTES_PER_ELEMENT[precision], overhead)


def size_report(param_count: int, overhead_model=None, precisions=("fp32", "fp16", "int8")) -> dict[str, SizeEntry]:
    return {p: model_size(param_count, p, overhead_model) for p in precisions}


def percent_reduction(baseline: float, candidate: float) -> float:
    if not baseline > 0:
        raise NonPositiveBaseline(f"baseline must be positive, got {baseline}")
    return 100.0 * (baseline - candidate) / baseline


def _render(header, rows, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def latency_table(results, baseline: str | None = None, fmt: str = "markdown") -> str:
    """Rows per precision: mean +- SD, peak memory, and reductions against ``baseline``."""
    results = list(results)
    base = next((r for r in results if r.label == baseline), results[0] if results else None)
    header = ["precision", "latency_ms (mean ± SD)", "peak_bytes", "latency_reduction_%", "memory_reduction_%"]
    rows = []
    for r in results:
        lat = f"{percent_reduction(base.mean_ms, r.mean_ms):.1f}" if base.mean_ms > 0 else "n/a"
        mem = f"{percent_reduction(base.peak_bytes, r.peak_bytes):.1f}" if base.peak_bytes > 0 else "n/a"
        rows.append([r.label, f"{r.mean_ms:.4f} ± {r.sd_ms:.4f}", r.peak_bytes, lat, mem])
    return _render(header, rows, fmt)


def size_table(report: dict[str, SizeEntry], baseline: str = "fp32", fmt: str = "markdown") -> str:
    base = report[baseline].total_bytes
    header = ["precision", "payload_bytes", "overhead_bytes", "total_bytes", "size_reduction_%"]
    rows = [
        [p, e.payload_bytes, e.overhead_bytes, e.total_bytes, f"{percent_reduction(base, e.total_bytes):.1f}"]
        for p, e in report.items()
    ]
    return _render(header, rows, fmt)


def overhead_fit_table(sizes_mb=None, fmt: str = "markdown") -> str:
    """Fit ``4P + c`` / ``P + c`` to fp32 and int8 sizes, then compare the implied fp16 size."""
    sizes_mb = PUBLISHED_SIZES_MB if sizes_mb is None else sizes_mb
    header = ["model", "params_M", "overhead_MB", "fp32:int8", "fp16_predicted_MB", "fp16_observed_MB"]
    rows = []
    for name, (f32, f16, i8) in sizes_mb.items():
        p, c = fit_constant_overhead(f32 * MB, i8 * MB)
        rows.append([name, f"{p / 1e6:.2f}", f"{c / MB:.2f}", f"{f32 / i8:.2f}", f"{(2 * p + c) / MB:.1f}", f"{f16:.1f}"])
    return _render(header, rows, fmt)
