"""Compiled vs numpy-fallback kernel timings.

    python3 benchmarks/bench_kernels.py [--runs 20] [--check]

Both backends are imported directly, so no environment switch is needed.
``--check`` also asserts the two produce identical outputs.
"""
import argparse
import sys

import numpy as np

from inpaintq import _pykernels
from inpaintq.bench import time_op

try:
    from inpaintq import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    a = rng.integers(-128, 128, (64, 256)).astype(np.int8)
    b = rng.integers(-128, 128, (256, 64)).astype(np.int8)
    x = rng.integers(-128, 128, (4, 32, 32)).astype(np.int8)
    w = rng.integers(-128, 128, (8, 4, 3, 3)).astype(np.int8)
    za = np.full(64, 3, dtype=np.int32)
    zb = np.full(64, -2, dtype=np.int32)
    zw = np.zeros(8, dtype=np.int32)
    vals = rng.standard_normal(200_000) * 100
    bits = rng.integers(0, 2**16, 200_000).astype(np.uint16)
    return {
        "qmatmul 64x256x64": lambda k: k.qmatmul_acc(a, b, za, zb),
        "qconv2d 4x32x32 * 8x3x3": lambda k: k.qconv2d_acc(x, w, 1, zw, 1, 1),
        "fp16 encode 2e5": lambda k: k.fp16_encode_array(vals),
        "fp16 decode 2e5": lambda k: k.fp16_decode_array(bits),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--check", action="store_true", help="assert identical outputs")
    args = ap.parse_args(argv)

    backends = {"python": _pykernels}
    if _ckernels is None:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    else:
        backends["cython"] = _ckernels

    print("| kernel | backend | mean ms | sd ms | speed-up |")
    print("|---|---|---|---|---|")
    for name, op in cases(np.random.default_rng(0)).items():
        if args.check and _ckernels is not None:
            assert np.array_equal(op(_pykernels), op(_ckernels), equal_nan=True), name
        base = None
        for label, mod in backends.items():
            r = time_op(lambda: op(mod), warmup=args.warmup, runs=args.runs, label=label)
            base = base or r.mean_ms
            print(f"| {name} | {label} | {r.mean_ms:.3f} | {r.sd_ms:.3f} | {base / r.mean_ms:.2f}x |")
    return 0


if __name__ == "__main__":
    sys.exit(main())
