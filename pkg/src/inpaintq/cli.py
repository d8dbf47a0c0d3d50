"""Command-line entry point: ``inpaintq {sweep,analyze,bench,quantize,inpaint}``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, stats
from .config import config_hash, make_config, stream
from .errors import InpaintQError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config_args(p):
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. sweep.n_test=50 (repeatable)")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")


def _load_cfg(args, **extra):
    return make_config(args.config, args.overrides, seed=args.seed, **extra)


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


# --- sweep ---


def cmd_sweep(args) -> int:
    from .experiment import LogicalClock, run_sweep

    cfg = _load_cfg(args, output_dir=args.out)
    clock = LogicalClock() if args.logical_clock else time.time
    outcome = run_sweep(cfg, Path(cfg.output_dir), clock=clock, log=lambda m: _say(args, m))
    _say(args, f"{len(outcome.records)} records, {outcome.failed} failed -> {cfg.output_dir}")
    return EXIT_DATA if outcome.failed else EXIT_OK


# --- analyze ---


def _csv_tag(text: str) -> dict:
    tag = {}
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    tag[k] = v
    return tag


def cmd_analyze(args) -> int:
    path = Path(args.results)
    text = path.read_text()
    mats = stats.parse_results(text)
    analysis = stats.analyze(mats, alpha=args.alpha, family=args.family)
    tag = _csv_tag(text)
    doc = {
        "source": str(path),
        "source_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config_hash": tag.get("config_hash"),
        "seed": None if "seed" not in tag else int(tag["seed"]),
        "alpha": args.alpha,
        "family": args.family,
        "settings": analysis,
    }
    table = stats.render_table(mats, analysis)
    table = f"<!-- config_hash={doc['config_hash']} seed={doc['seed']} source_sha256={doc['source_sha256']} -->\n" + table
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.table:
        Path(args.table).write_text(table)
    print(table, end="")
    for name, a in analysis.items():
        letters = ", ".join(f"{c}={g}" for c, g in a["letters"].items())
        print(f"{name}: Friedman p={a['friedman']['p']:.3g}; groups {letters}")
    return EXIT_OK


# --- bench ---


def run_bench(cfg, mock=None) -> dict:
    from .diffusion import Denoiser, DenoiserConfig, calibration_batch, make_schedule
    from .experiment import build_world
    from .toydet import detect, train_template_detector, manifest_from_arrays

    world = build_world(cfg)
    g, b = cfg.generator, cfg.bench
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    crops, labels = world.context_crops(max(b.batch, 256), g.margin, stream(cfg.seed, "bench:crops"))
    model = Denoiser(DenoiserConfig(sample_shape=crops.shape[1:], n_classes=world.n_classes, hidden=g.hidden, seed=cfg.seed))
    calib = calibration_batch(crops, sched, 256, cfg.seed, labels=labels, null_class=model.null_class)
    x = crops[: b.batch]
    imgs, boxes = world.dataset(8, stream(cfg.seed, "bench:images"))
    items, store = manifest_from_arrays("bench", imgs, boxes)
    det = train_template_detector(items, n_classes=world.n_classes, load=store.__getitem__)
    q = cfg.quant

    def clock():
        return bench.MockClock(mock) if mock else bench.wall_clock_ms

    out = {"denoiser_step": [], "detect": []}
    for p in ("fp32", "fp16", "int8"):
        m = model.as_precision(p, calib, q.scheme, q.symmetry, q.granularity, q.percentile)
        op = lambda m=m: m(x, 500, labels[: b.batch])  # noqa: E731
        r = bench.time_op(op, b.warmup, b.runs, clock(), label=p)
        out["denoiser_step"].append(bench.BenchResult(p, r.runs, r.mean_ms, r.sd_ms, bench.peak_memory(op)))
        w = det.as_precision(p, imgs, q.scheme, q.symmetry, q.percentile, q.granularity)
        op = lambda w=w: detect(imgs[0], w)  # noqa: E731
        r = bench.time_op(op, b.warmup, b.runs, clock(), label=p)
        out["detect"].append(bench.BenchResult(p, r.runs, r.mean_ms, r.sd_ms, bench.peak_memory(op)))
    out["sizes"] = bench.size_report(model.param_count())
    return out


def cmd_bench(args) -> int:
    overrides = list(args.overrides)
    if args.mock_intervals:
        overrides.append(f"bench.mock_intervals_ms=[{args.mock_intervals}]")
    args.overrides = overrides
    cfg = _load_cfg(args)
    res = run_bench(cfg, cfg.bench.mock_intervals_ms or None)
    h = config_hash(cfg)
    fmt = args.format
    header = f"config_hash={h} seed={cfg.seed}"
    parts = []
    for key in ("denoiser_step", "detect"):
        parts.append((key, bench.latency_table(res[key], baseline="fp32", fmt=fmt)))
    parts.append(("model_size", bench.size_table(res["sizes"], fmt=fmt)))
    parts.append(("overhead_fit", bench.overhead_fit_table(fmt=fmt)))
    text = ""
    for name, body in parts:
        text += (f"## {name}\n<!-- {header} -->\n\n" if fmt == "markdown" else f"# {name} {header}\n") + body + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = "md" if fmt == "markdown" else "csv"
        for name, body in parts:
            prefix = f"<!-- {header} -->\n" if fmt == "markdown" else f"# {header}\n"
            (out / f"{name}.{ext}").write_text(prefix + body)
        summary = {
            "config_hash": h,
            "seed": cfg.seed,
            "mock_clock": bool(cfg.bench.mock_intervals_ms),
            **{k: [r.__dict__ for r in res[k]] for k in ("denoiser_step", "detect")},
            "sizes": {p: {"payload_bytes": e.payload_bytes, "overhead_bytes": e.overhead_bytes} for p, e in res["sizes"].items()},
        }
        (out / "bench.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --- quantize ---


def _read_array(path: Path) -> np.ndarray:
    from .tensor import load_csv, load_tensor

    if path.suffix == ".csv":
        return load_csv(path).numpy()
    if path.suffix == ".npy":
        return np.load(path)
    return load_tensor(path).numpy()


def cmd_quantize(args) -> int:
    from .quant import QuantizedTensor, calibrate, dequantize, quantize
    from .tensor import save_tensor

    src, dst = Path(args.input), Path(args.output)
    if args.dequantize:
        qt = QuantizedTensor.load(src)
        save_tensor(dequantize(qt), dst)
        print(json.dumps({"shape": list(qt.shape), **qt.params.to_json()}, sort_keys=True))
        return EXIT_OK
    arr = _read_array(src)
    params = calibrate(arr, args.scheme, args.symmetry, args.percentile, args.axis)
    qt = quantize(arr, params)
    qt.save(dst)
    print(json.dumps({"shape": list(qt.shape), **params.to_json()}, sort_keys=True))
    return EXIT_OK


# --- inpaint ---


def _parse_box(text: str):
    from .augment import RoiBox

    try:
        x, y, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--box expects x,y,w,h integers, got {text!r}") from None
    return RoiBox(x, y, w, h)


def cmd_inpaint(args) -> int:
    from .augment import MaskSpec, generate_mask
    from .diffusion import Denoiser, InpaintRequest, inpaint, make_schedule
    from .experiment import build_world, generator_at, generator_calibration, train_generator
    from .tensor import Tensor, save_tensor

    cfg = _load_cfg(args)
    world = build_world(cfg)
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    if args.model:
        model = Denoiser.load(args.model)
        calib = generator_calibration(cfg, world, sched, model) if args.precision == "int8" else None
    else:
        _say(args, f"training generator ({cfg.generator.train_steps} steps)")
        model, calib = train_generator(cfg, world, sched)
    gen = generator_at(model, args.precision, calib, cfg)
    if args.image:
        image = _read_array(Path(args.image))
        rois = []
    else:
        image, rois = world.image(stream(cfg.seed, "inpaint:image"))
    c = model.sample_shape[0]
    margin = (c - world.obj) // 2
    if args.box:
        box = _parse_box(args.box)
    else:
        H, W = image.shape
        inner = [type(r)(r.x - margin, r.y - margin, r.w, r.h, r.cls) for r in rois]
        m = generate_mask((H - 2 * margin, W - 2 * margin), inner, (world.obj, world.obj), stream(cfg.seed, "inpaint:mask"))
        b = m.placement
        box = type(b)(b.x + margin, b.y + margin, b.w, b.h)
    if (box.w, box.h) != (world.obj, world.obj):
        raise InpaintQError(f"the toy generator fills {world.obj}x{world.obj} regions, got {box.w}x{box.h}")
    y, x = int(box.y) - margin, int(box.x) - margin
    if y < 0 or x < 0 or y + c > image.shape[0] or x + c > image.shape[1]:
        raise InpaintQError(f"box needs a {margin}px margin inside the image")
    crop = image[y : y + c, x : x + c]
    mask = np.zeros((c, c))
    mask[margin : margin + world.obj, margin : margin + world.obj] = 1
    s = cfg.sampler
    req = InpaintRequest(crop, mask, args.cls, s.strength, s.steps, s.guidance, s.name)
    filled = inpaint(req, gen, sched, stream(cfg.seed, "inpaint:sample"))[0]
    result = image.copy()
    result[y : y + c, x : x + c] = filled
    spec = MaskSpec(type(box)(box.x, box.y, box.w, box.h, args.cls), args.cls, cfg.seed)
    out = Path(args.out)
    save_tensor(Tensor(result), out)
    meta = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "precision": args.precision,
        "placement": spec.placement.to_json(),
        "sampler": {"name": s.name, "steps": s.steps, "guidance": s.guidance, "strength": s.strength},
    }
    out.with_suffix(out.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inpaintq", description="Quantized inpainting augmentation toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("sweep", help="run the augmentation x precision sweep")
    _config_args(s)
    s.add_argument("--out", help="output directory (overrides config output_dir)")
    s.add_argument("--logical-clock", action="store_true", help="deterministic timestamps in records")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="Friedman / Wilcoxon / letter groups on a results CSV")
    a.add_argument("results", help="CSV with header inpainting,augmentation,fp32,fp16,int8")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--family", choices=("setting", "table"), default="setting",
                   help="Bonferroni family: pairs within one setting (3) or the whole file")
    a.add_argument("--out", help="write analysis JSON here")
    a.add_argument("--table", help="write the Markdown table here")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="latency, peak memory and size tables")
    _config_args(b)
    b.add_argument("--mock-intervals", help="comma-separated ms intervals for a deterministic clock")
    b.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    b.add_argument("--out", help="directory for table files and bench.json")
    b.set_defaults(func=cmd_bench)

    q = sub.add_parser("quantize", help="quantize a tensor file to INT8 (or back with --dequantize)")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--scheme", choices=("minmax", "percentile"), default="minmax")
    q.add_argument("--symmetry", choices=("symmetric", "asymmetric"), default="symmetric")
    q.add_argument("--percentile", type=float, default=99.99)
    q.add_argument("--axis", type=int, default=None, help="per-channel axis (default per-tensor)")
    q.add_argument("--dequantize", action="store_true", help="read a quantized file, write float tensor")
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("inpaint", help="inpaint one object into a single image")
    _config_args(i)
    i.add_argument("--image", help="input tensor file (default: a generated toy image)")
    i.add_argument("--box", help="x,y,w,h of the region to fill (default: ROI-avoiding random)")
    i.add_argument("--class", dest="cls", type=int, default=0)
    i.add_argument("--precision", choices=("fp32", "fp16", "int8"), default="fp32")
    i.add_argument("--model", help="saved denoiser directory (default: train one from config)")
    i.add_argument("--out", required=True, help="output tensor file")
    i.add_argument("--quiet", action="store_true")
    i.set_defaults(func=cmd_inpaint)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (InpaintQError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
