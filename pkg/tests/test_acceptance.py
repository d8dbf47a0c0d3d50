"""Acceptance criteria A1-A10. Each test prints one PASS/FAIL line in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import json
import time
from importlib import resources

import numpy as np
import pytest
from oracles import map_oracle, random_instance
from scipy import stats as sps

from inpaintq import bench, cli
from inpaintq.config import make_config
from inpaintq.diffusion import (
    Denoiser,
    DenoiserConfig,
    InpaintRequest,
    TrainConfig,
    calibration_batch,
    forward_diffuse,
    forward_step,
    inpaint,
    make_schedule,
    sample_ddim,
    sample_euler_ancestral,
    smoothed_loss,
    train_toy_denoiser,
)
from inpaintq.experiment import directional_check, run_sweep
from inpaintq.metrics import THRESHOLDS, map50, map5095
from inpaintq.quant import (
    QuantizedTensor,
    QuantParams,
    calibrate,
    dequantize_array,
    qconv2d,
    qmatmul,
    quantize,
)
from inpaintq.stats import bundled_results, column_summary
from inpaintq.tensor import Tensor, fp16_decode_array, fp16_encode_array
from inpaintq.toydet import Detection, FP16_SCORE_BOUND

from conftest import loop_conv2d, loop_matmul

# Printed "Mean ± SD (Augmentation)" rows, per inpainting setting, columns fp32/fp16/int8.
PRINTED_SUMMARY = {
    "yolo11l_map50": {
        "fp32": [(0.924, 0.007), (0.924, 0.007), (0.837, 0.015)],
        "fp16": [(0.923, 0.009), (0.923, 0.009), (0.835, 0.015)],
        "int8": [(0.926, 0.008), (0.926, 0.008), (0.842, 0.017)],
    },
    "rtdetrl_map50": {
        "fp32": [(0.904, 0.009), (0.905, 0.009), (0.797, 0.032)],
        "fp16": [(0.906, 0.004), (0.906, 0.004), (0.797, 0.026)],
        "int8": [(0.899, 0.018), (0.899, 0.018), (0.790, 0.032)],
    },
}

# published generator latency (s) and peak memory (MB) per precision
GENERATOR_COSTS = {"fp32": (16.55, 6829.98), "fp16": (4.50, 3683.45), "int8": (4.4, 3683.42)}


@pytest.mark.criterion("A1", "published Mean ± SD rows reproduced within 0.001")
def test_a1_summary_rows():
    t0 = time.perf_counter()
    misses = []
    for table, settings in PRINTED_SUMMARY.items():
        mats = bundled_results(table)
        for setting, printed in settings.items():
            got = column_summary(mats[setting].without_baseline())
            for col, (mu_p, sd_p) in zip(("fp32", "fp16", "int8"), printed):
                mu, sd = got[col]
                if abs(mu - mu_p) > 0.001 + 1e-12 or abs(sd - sd_p) > 0.001 + 1e-12:
                    misses.append(f"{table}/{setting}/{col}: {mu:.4f} ± {sd:.4f} vs printed {mu_p} ± {sd_p}")
    assert time.perf_counter() - t0 < 1.0
    assert not misses, "; ".join(misses)


@pytest.mark.criterion("A2", "Friedman + Wilcoxon/Bonferroni letters A, A, B on all six settings")
def test_a2_groupings(tmp_path, capsys):
    t0 = time.perf_counter()
    problems = []
    for table in PRINTED_SUMMARY:
        src = resources.files("inpaintq") / "data" / f"{table}.csv"
        out = tmp_path / f"{table}.json"
        assert cli.main(["analyze", str(src), "--out", str(out)]) == 0
        for setting, a in json.loads(out.read_text())["settings"].items():
            letters = [a["letters"][c] for c in ("fp32", "fp16", "int8")]
            fp32_fp16 = next(r for r in a["pairwise"] if {r["a"], r["b"]} == {"fp32", "fp16"})
            if letters != ["A", "A", "B"] or a["friedman"]["p"] >= 0.05 or fp32_fp16["p_adj"] <= 0.05:
                problems.append(
                    f"{table}/{setting}: letters {''.join(letters)}, Friedman p={a['friedman']['p']:.2g}, "
                    f"fp32-vs-fp16 adjusted p={fp32_fp16['p_adj']:.3g}"
                )
    capsys.readouterr()
    assert time.perf_counter() - t0 < 1.0
    assert not problems, "; ".join(problems)


@pytest.mark.criterion("A3", "published reductions 72.8 / 73.4 / 46.1 percent")
def test_a3_reductions():
    lat16 = bench.percent_reduction(GENERATOR_COSTS["fp32"][0], GENERATOR_COSTS["fp16"][0])
    lat8 = bench.percent_reduction(GENERATOR_COSTS["fp32"][0], GENERATOR_COSTS["int8"][0])
    mem16 = bench.percent_reduction(GENERATOR_COSTS["fp32"][1], GENERATOR_COSTS["fp16"][1])
    assert abs(lat16 - 72.8) <= 0.1, lat16
    assert abs(lat8 - 73.4) <= 0.1, lat8
    assert abs(mem16 - 46.1) <= 0.1, mem16


def _dyadic(rng, n=None):
    if n is None:
        return QuantParams(2.0 ** -int(rng.integers(1, 10)), int(rng.integers(-20, 21)))
    return QuantParams(2.0 ** -rng.integers(1, 10, n).astype(float), rng.integers(-20, 21, n), 0)


def _rand_qt(rng, shape, params):
    return QuantizedTensor(rng.integers(-128, 128, shape).astype(np.int8), params, shape)


@pytest.mark.criterion("A4", "FP16 codec, INT8 round trip and integer kernels are exact")
def test_a4_quant_numerics():
    t0 = time.perf_counter()
    pats = np.arange(2**16, dtype=np.uint16)
    vals = fp16_decode_array(pats)
    finite = np.isfinite(vals)
    assert np.array_equal(fp16_encode_array(vals[finite]), pats[finite])

    rng = np.random.default_rng(44)
    w = rng.standard_normal(100_000) * rng.uniform(0.01, 10)
    for sym in ("symmetric", "asymmetric"):
        p = calibrate(w, symmetry=sym)
        err = np.abs(dequantize_array(quantize(w, p)) - w)
        assert err.max() <= p.scale / 2 * (1 + 1e-9)

    for i in range(200):
        if i % 2 == 0:
            m, k, n = (int(v) for v in rng.integers(1, 9, 3))
            a = _rand_qt(rng, (m, k), _dyadic(rng))
            b = _rand_qt(rng, (k, n), _dyadic(rng))
            assert np.array_equal(qmatmul(a, b).numpy(), loop_matmul(dequantize_array(a), dequantize_array(b)))
        else:
            c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            kh, kw = (int(v) for v in rng.integers(1, 4, 2))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
            x = _rand_qt(rng, (c, 5, 5), _dyadic(rng))
            k = _rand_qt(rng, (o, c, kh, kw), _dyadic(rng, o))
            want = loop_conv2d(dequantize_array(x), dequantize_array(k), stride, pad)
            assert np.array_equal(qconv2d(x, k, stride, pad).numpy(), want)
    assert time.perf_counter() - t0 < 30


@pytest.mark.criterion("A5", "forward marginals within 3 SE; one-step composition KS < 0.02")
def test_a5_diffusion_marginals():
    sched = make_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(55)
    n = 100_000
    x0 = np.array([1.5, -0.5, 0.0])
    for t in rng.choice(np.arange(1, 1001), 10, replace=False):
        ab = sched.alpha_bar_at(int(t))
        xt = forward_diffuse(np.broadcast_to(x0, (n, 3)), int(t), rng.standard_normal((n, 3)), sched)
        var = 1 - ab
        assert np.all(np.abs(xt.mean(0) - np.sqrt(ab) * x0) < 3 * np.sqrt(var / n))
        assert np.all(np.abs(xt.var(0, ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1)))
    for t in (1, 10, 100):
        stepped = np.full(n, 0.7)
        for s in range(1, t + 1):
            stepped = forward_step(stepped, s, rng.standard_normal(n), sched)
        direct = forward_diffuse(np.full(n, 0.7), t, rng.standard_normal(n), sched)
        assert sps.ks_2samp(stepped, direct).statistic < 0.02


@pytest.mark.criterion("A6", "toy denoiser halves its loss; DDIM and Euler-A recover mode weights")
def test_a6_toy_generative_fidelity():
    t0 = time.perf_counter()
    sched = make_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(0)
    weight = 0.3
    labels = (rng.random(4000) >= weight).astype(int)
    data = np.array([[1.0, 1.0], [-1.0, -1.0]])[labels] + 0.1 * rng.standard_normal((4000, 2))
    model = train_toy_denoiser(data, sched, TrainConfig(steps=3000, batch_size=256, lr=2e-3, seed=1))
    first, last = smoothed_loss(model.loss_history, 100)
    assert last <= 0.5 * first, (first, last)
    for sampler in (sample_ddim, sample_euler_ancestral):
        s = sampler(model, sched, 50, np.random.default_rng(5), n=10_000)
        frac = float(np.mean(s.sum(axis=1) > 0))
        assert abs(frac - weight) <= 0.1, (sampler.__name__, frac)
    assert time.perf_counter() - t0 < 300


@pytest.mark.criterion("A7", "inpainting keeps unmasked pixels; strength 0 and empty mask are identities")
def test_a7_inpainting_contract():
    sched = make_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(77)
    model = Denoiser(DenoiserConfig(sample_shape=(6, 6), n_classes=2, hidden=32, seed=3))
    calib = calibration_batch(rng.standard_normal((64, 6, 6)), sched, 128, seed=1, labels=rng.integers(0, 2, 64), null_class=model.null_class)
    gens = {p: model.as_precision(p, calib) for p in ("fp32", "fp16", "int8")}
    for i in range(100):
        gen = gens[("fp32", "fp16", "int8")[i % 3]]
        img = rng.standard_normal((2, 6, 6))
        mask = rng.integers(0, 2, (6, 6))
        sampler = ("ddim", "euler_ancestral")[i % 2]
        steps, guidance, cls = int(rng.integers(1, 12)), float(rng.uniform(0, 8)), int(rng.integers(0, 2))
        out = inpaint(InpaintRequest(img, mask, cls, float(rng.uniform(0.05, 1)), steps, guidance, sampler), gen, sched, rng)
        keep = np.broadcast_to(mask == 0, img.shape)
        assert np.array_equal(out[keep], img[keep])
        same = inpaint(InpaintRequest(img, mask, cls, 0.0, steps, guidance, sampler), gen, sched, rng)
        assert np.array_equal(same, img)
        empty = inpaint(InpaintRequest(img, np.zeros((6, 6)), cls, 0.7, steps, guidance, sampler), gen, sched, rng)
        assert np.array_equal(empty, img)


@pytest.mark.criterion("A8", "mAP50 and mAP50-95 equal a brute-force oracle on 500 instances")
def test_a8_metrics_oracle():
    rng = np.random.default_rng(88)
    for _ in range(500):
        dets, gts = random_instance(rng, n_images=int(rng.integers(1, 4)), max_boxes=5, n_classes=3)
        assert abs(map50(dets, gts) - map_oracle(dets, gts, [0.5])) <= 1e-9
        assert abs(map5095(dets, gts) - map_oracle(dets, gts, THRESHOLDS)) <= 1e-9
        perfect = [[Detection(b, b.cls, 0.9) for b in g] for g in gts]
        assert map50(perfect, gts) == 1.0 and map5095(perfect, gts) == 1.0


@pytest.mark.slow
@pytest.mark.criterion("A9", "seeded sweep: INT8 recovers with augmentation; FP32/FP16 agree within bound")
def test_a9_end_to_end_direction(tmp_path):
    t0 = time.perf_counter()
    cfg = make_config(seed=0)
    outcome = run_sweep(cfg, tmp_path)
    assert outcome.failed == 0
    check = directional_check(outcome)
    for ip, c in check.items():
        assert c["int8_augmented_mean"] >= c["int8_baseline"], (ip, c)
        assert c["fp32_fp16_score_max_gap"] <= FP16_SCORE_BOUND, (ip, c)
        assert c["fp32_fp16_unexplained"] == 0, (ip, c)
    assert time.perf_counter() - t0 < 600


@pytest.mark.criterion("A10", "mock-clock stats and allocation peaks exact; FP32:INT8 payload ratio 4.0")
def test_a10_bench_determinism():
    r = bench.time_op(lambda: None, warmup=2, runs=3, clock=bench.MockClock([10, 20, 30]))
    assert (r.mean_ms, r.sd_ms, r.runs) == (20.0, 10.0, 3)

    def seq():
        a = Tensor(np.zeros(1000))
        del a
        b = Tensor(np.zeros(1000))
        del b

    def nested():
        a = Tensor(np.zeros(1000))
        b = Tensor(np.zeros(500))
        del a, b

    assert bench.peak_memory(seq) == 8000
    assert bench.peak_memory(nested) == 12000
    rep = bench.size_report(1_234_567)
    assert rep["fp32"].payload_bytes / rep["int8"].payload_bytes == 4.0
