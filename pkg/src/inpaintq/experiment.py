"""End-to-end augmentation sweep on the toy world.

One class-conditional denoiser is trained on object-centred context crops
(the "pretrained" generator). For each inpainting precision it synthesises
a pool of images by inpainting new objects into ROI-free spots of the
original images. Every (inpaint precision, level, detector precision) cell
then trains a template detector on originals plus synthetic items and scores
mAP on a fixed test set. Placements and sampling noise are shared across
inpainting precisions, so cells differ only in what they are meant to vary.
"""
from __future__ import annotations

import json
import time
import traceback
from collections.abc import Callable
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import augment, stats
from .config import ExperimentConfig, canonical_json, config_hash, stream
from .diffusion import (
    DenoiserConfig,
    InpaintRequest,
    TrainConfig,
    calibration_batch,
    inpaint,
    make_schedule,
    train_toy_denoiser,
)
from .errors import InpaintQError
from .metrics import map50, map5095
from .tensor import Tensor, save_tensor
from .toydet import FP16_SCORE_BOUND, DetectorConfig, ToyWorld, agreement, detect, train_template_detector

@dataclass
class RunRecord:
    config_hash: str
    seed: int
    level: int
    inpaint_precision: str
    model_precision: str
    status: str
    map50: float | None
    map5095: float | None
    n_original: int
    n_synthetic: int
    timing_s: float
    started: float
    finished: float
    score_gap_vs_fp32: float | None = None
    unexplained_vs_fp32: int | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


class LogicalClock:
    """Deterministic stand-in for ``time.time``: 0, 1, 2, ..."""

    def __init__(self):
        self.t = -1.0

    def __call__(self) -> float:
        self.t += 1.0
        return self.t


def _seed_int(root: int, name: str) -> int:
    return int(stream(root, name).integers(0, 2**63 - 1))


def build_world(cfg: ExperimentConfig) -> ToyWorld:
    w = cfg.world
    return ToyWorld(size=w.size, obj=w.obj, noise=w.noise, shape_noise=w.shape_noise)


def train_generator(cfg: ExperimentConfig, world: ToyWorld, sched):
    g = cfg.generator
    crops, labels = world.context_crops(g.n_crops, g.margin, stream(cfg.seed, "diffusion:crops"))
    mcfg = DenoiserConfig(
        sample_shape=crops.shape[1:], n_classes=world.n_classes, hidden=g.hidden, seed=_seed_int(cfg.seed, "diffusion:init")
    )
    tcfg = TrainConfig(
        steps=g.train_steps, batch_size=g.batch_size, lr=g.lr, p_uncond=g.p_uncond, seed=_seed_int(cfg.seed, "diffusion:train")
    )
    model = train_toy_denoiser(crops, sched, tcfg, mcfg, labels=labels)
    return model, generator_calibration(cfg, world, sched, model)


def generator_calibration(cfg: ExperimentConfig, world: ToyWorld, sched, model):
    """Noisy held-out crops used to fit INT8 activation ranges of ``model``."""
    g = cfg.generator
    crops, labels = world.context_crops(g.n_crops, g.margin, stream(cfg.seed, "diffusion:crops"))
    return calibration_batch(
        crops, sched, g.n_calib, _seed_int(cfg.seed, "diffusion:calib"), labels=labels, null_class=model.null_class
    )


def generator_at(model, precision: str, calib, cfg: ExperimentConfig):
    q = cfg.quant
    return model.as_precision(precision, calib, q.scheme, q.symmetry, q.granularity, q.percentile)


def synthesize_pool(cfg, world, orig_images, orig_boxes, gen, sched, size: int, tag: str):
    """``size`` synthetic images, each an original with new objects inpainted."""
    sw, margin, obj = cfg.sweep, cfg.generator.margin, world.obj
    n = len(orig_images)
    place_rng = stream(cfg.seed, "augment:placement")
    annot_rng = stream(cfg.seed, "augment:annotate")
    inner = (world.size - 2 * margin, world.size - 2 * margin)
    plans = []
    for j in range(size):
        base = j % n
        taken = [augment.RoiBox(b.x - margin, b.y - margin, b.w, b.h, b.cls) for b in orig_boxes[base]]
        masks = []
        for _ in range(sw.objects_per_synthetic):
            cls = int(place_rng.integers(0, world.n_classes))
            try:
                m = augment.generate_mask(inner, taken, (obj, obj), place_rng, sw.max_attempts, cls)
            except augment.PlacementExhausted:
                break
            taken.append(m.placement)
            b = m.placement
            masks.append(augment.MaskSpec(augment.RoiBox(b.x + margin, b.y + margin, b.w, b.h, cls), cls, cfg.seed))
        plans.append((base, masks))

    c = obj + 2 * margin
    crops, conds = [], []
    for base, masks in plans:
        for m in masks:
            b = m.placement
            y, x = int(b.y) - margin, int(b.x) - margin
            crops.append(orig_images[base][y : y + c, x : x + c])
            conds.append(m.target_class)
    if crops:
        crop_mask = np.zeros((c, c))
        crop_mask[margin : margin + obj, margin : margin + obj] = 1
        s = cfg.sampler
        req = InpaintRequest(
            np.stack(crops), crop_mask, np.array(conds), s.strength, s.steps, s.guidance, s.name
        )
        filled = inpaint(req, gen, sched, stream(cfg.seed, "diffusion:inpaint"))
    jitter = augment.Jitter(sw.jitter_shift, sw.jitter_scale)
    items, store, k = [], {}, 0
    for j, (base, masks) in enumerate(plans):
        img = orig_images[base].copy()
        boxes = list(orig_boxes[base])
        for m in masks:
            b = m.placement
            y, x = int(b.y), int(b.x)
            img[y : y + obj, x : x + obj] = filled[k, margin : margin + obj, margin : margin + obj]
            boxes.append(augment.auto_annotate(m, img.shape, jitter, annot_rng))
            k += 1
        path = f"images/syn-{tag}/{j:05d}.iqt"
        store[path] = img
        items.append(augment.ManifestItem(path, boxes, "synthetic", cfg.seed))
    return items, store


@dataclass
class SweepOutcome:
    records: list[RunRecord]
    map50: dict[str, stats.ResultMatrix]
    map5095: dict[str, stats.ResultMatrix]
    config_hash: str

    @property
    def failed(self) -> int:
        return sum(r.status != "ok" for r in self.records)


def _matrix(records, levels, precisions, key):
    rows = tuple("none" if lv == 0 else str(lv) for lv in levels)
    vals = np.full((len(levels), len(precisions)), np.nan)
    for r in records:
        if r.status == "ok":
            vals[levels.index(r.level), precisions.index(r.model_precision)] = getattr(r, key)
    return rows, vals


def run_sweep(
    cfg: ExperimentConfig,
    out_dir=None,
    clock: Callable[[], float] = time.time,
    log: Callable[[str], None] | None = None,
) -> SweepOutcome:
    """Run every cell; a failing cell is recorded and the sweep moves on."""
    log = log or (lambda msg: None)
    h = config_hash(cfg)
    sw = cfg.sweep
    world = build_world(cfg)
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    orig_images, orig_boxes = world.dataset(sw.n_original, stream(cfg.seed, "toydet:originals"))
    test_images, test_boxes = world.dataset(sw.n_test, stream(cfg.seed, "toydet:test"))
    calib_images, _ = world.dataset(sw.n_calib, stream(cfg.seed, "toydet:calib"))
    originals, store = [], {}
    for i, (img, boxes) in enumerate(zip(orig_images, orig_boxes)):
        path = f"images/orig/{i:05d}.iqt"
        store[path] = img
        originals.append(augment.ManifestItem(path, list(boxes), "original", cfg.seed))

    levels = list(sw.levels)
    pool_size = max((augment.synthetic_count(sw.n_original, lv) for lv in levels), default=0)
    needs_generator = pool_size > 0
    if needs_generator:
        log(f"training generator ({cfg.generator.train_steps} steps)")
        model, calib = train_generator(cfg, world, sched)
        if out_dir is not None:
            model.save(Path(out_dir) / "generator")
    det_cfg = DetectorConfig(
        (cfg.detector.template_size,) * 2, cfg.detector.score_thresh, cfg.detector.nms_iou
    )
    q = cfg.quant
    records: list[RunRecord] = []
    out = Path(out_dir) if out_dir is not None else None

    for ip in sw.inpaint_precisions:
        pool: list = []
        if needs_generator:
            try:
                gen = generator_at(model, ip, calib, cfg)
                pool, pool_store = synthesize_pool(cfg, world, orig_images, orig_boxes, gen, sched, pool_size, ip)
                store.update(pool_store)
            except (InpaintQError, ValueError, ArithmeticError) as e:
                log(f"inpaint {ip}: pool synthesis failed: {e}")
                pool, pool_error = None, f"pool synthesis failed: {type(e).__name__}: {e}"
        for lv in levels:
            t0 = clock()
            try:
                if pool is None and lv > 0:
                    raise InpaintQError(pool_error)
                manifest = augment.assemble_dataset(originals, pool or [], lv, _seed_int(cfg.seed, f"augment:assemble:{lv}"))
                if out is not None:
                    mpath = out / "manifests" / ip / f"level_{lv:03d}.jsonl"
                    mpath.parent.mkdir(parents=True, exist_ok=True)
                    augment.write_manifest(manifest, mpath)
                weights = train_template_detector(manifest, det_cfg, world.n_classes, load=store.__getitem__)
                cell_error = None
            except Exception as e:  # noqa: BLE001 - recorded per cell
                weights, cell_error = None, f"{type(e).__name__}: {e}"
            # fp32 first so the other precisions can be compared against it
            order = sorted(sw.model_precisions, key=lambda p: p != "fp32")
            cell_records, ref_preds = {}, None
            for mp in order:
                started = t0 if mp == order[0] else clock()
                err = cell_error
                m50 = m5095 = gap = unexplained = None
                if err is None:
                    try:
                        w = weights.as_precision(mp, calib_images, q.scheme, q.symmetry, q.percentile, q.granularity)
                        preds = [detect(im, w) for im in test_images]
                        m50, m5095 = map50(preds, test_boxes), map5095(preds, test_boxes)
                        if mp == "fp32":
                            ref_preds = preds
                        elif ref_preds is not None:
                            agg = [
                                agreement(a, b, FP16_SCORE_BOUND, det_cfg.score_thresh, det_cfg.nms_iou)
                                for a, b in zip(ref_preds, preds)
                            ]
                            gap = max(x["max_gap"] for x in agg)
                            unexplained = sum(x["unexplained"] for x in agg)
                    except Exception as e:  # noqa: BLE001
                        err = f"{type(e).__name__}: {e}"
                        log(traceback.format_exc())
                finished = clock()
                n_syn = augment.synthetic_count(sw.n_original, lv)
                cell_records[mp] = RunRecord(
                    h, cfg.seed, lv, ip, mp, "ok" if err is None else "failed", m50, m5095,
                    sw.n_original, n_syn, finished - started, started, finished, gap, unexplained, err,
                )
            records.extend(cell_records[mp] for mp in sw.model_precisions)
            log(f"inpaint={ip} level={lv}% done")

    if out is not None:
        for path, img in store.items():
            p = out / path
            p.parent.mkdir(parents=True, exist_ok=True)
            save_tensor(Tensor(img), p)

    mp = list(sw.model_precisions)
    m50, m5095 = {}, {}
    for ip in sw.inpaint_precisions:
        sub = [r for r in records if r.inpaint_precision == ip]
        rows, v = _matrix(sub, levels, mp, "map50")
        m50[ip] = stats.ResultMatrix(rows, tuple(mp), v)
        rows, v = _matrix(sub, levels, mp, "map5095")
        m5095[ip] = stats.ResultMatrix(rows, tuple(mp), v)
    outcome = SweepOutcome(records, m50, m5095, h)
    if out is not None:
        write_outputs(cfg, outcome, out)
    return outcome


def directional_check(outcome: SweepOutcome) -> dict:
    """INT8 level-mean vs its no-augmentation baseline, and FP32/FP16 agreement, per inpainting setting."""
    out = {}
    for ip, m in outcome.map50.items():
        entry = {}
        if "int8" in m.cols and "none" in m.rows:
            col = m.column("int8")
            aug = np.array([v for r, v in zip(m.rows, col) if r != "none"])
            base = float(col[m.rows.index("none")])
            entry["int8_baseline"] = base
            entry["int8_augmented_mean"] = float(aug.mean()) if aug.size else float("nan")
            entry["int8_recovers"] = bool(aug.size and aug.mean() >= base)
        if "fp32" in m.cols and "fp16" in m.cols:
            fp16 = [r for r in outcome.records if r.inpaint_precision == ip and r.model_precision == "fp16"]
            ok = [r for r in fp16 if r.status == "ok" and r.score_gap_vs_fp32 is not None]
            entry["fp32_fp16_map50_max_gap"] = float(np.max(np.abs(m.column("fp32") - m.column("fp16"))))
            entry["fp32_fp16_score_max_gap"] = max((r.score_gap_vs_fp32 for r in ok), default=None)
            entry["fp32_fp16_unexplained"] = sum(r.unexplained_vs_fp32 for r in ok)
            entry["score_bound"] = FP16_SCORE_BOUND
            entry["fp32_fp16_agree"] = bool(
                ok
                and len(ok) == len(fp16)
                and entry["fp32_fp16_score_max_gap"] <= FP16_SCORE_BOUND
                and entry["fp32_fp16_unexplained"] == 0
            )
        out[ip] = entry
    return out


def write_outputs(cfg: ExperimentConfig, outcome: SweepOutcome, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tag = f"config_hash={outcome.config_hash} seed={cfg.seed}"
    (out / "config.json").write_text(
        json.dumps({"config_hash": outcome.config_hash, "seed": cfg.seed, "config": cfg.identity()}, indent=2, sort_keys=True)
        + "\n"
    )
    with open(out / "records.jsonl", "w") as f:
        for r in outcome.records:
            f.write(canonical_json(r.to_json()) + "\n")
    (out / "results.csv").write_text(stats.results_csv(outcome.map50, tag))
    (out / "results_map5095.csv").write_text(stats.results_csv(outcome.map5095, tag))
    report = {
        "config_hash": outcome.config_hash,
        "seed": cfg.seed,
        "cells": len(outcome.records),
        "failed": outcome.failed,
        "directional_check": directional_check(outcome),
    }
    (out / "sweep_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
