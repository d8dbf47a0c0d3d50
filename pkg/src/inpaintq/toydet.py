"""Template-correlation detector and the toy two-class world it is evaluated on.

Templates are means of zero-mean, unit-norm crops. Detection scores every
window by normalised cross-correlation with each class kernel, thresholds,
and applies greedy per-class NMS. The INT8 path computes the correlation
numerator with :func:`inpaintq.quant.qconv2d`; FP16/FP32 only change how the
kernels are stored, all arithmetic stays in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .augment import ManifestItem, RoiBox, generate_mask
from .errors import EmptyClass, SchemaError, ShapeMismatch
from .metrics import iou
from .quant import QuantParams, calibrate, qconv2d, quantize
from .tensor import Tensor, load_tensor, round_to_precision, save_tensor

PRECISIONS = ("fp32", "fp16", "int8")


@dataclass(frozen=True)
class Detection:
    box: RoiBox
    cls: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    def to_json(self, image=None) -> dict:
        b = self.box
        return {"image": image, "class": self.cls, "score": self.score, "box": [b.x, b.y, b.w, b.h]}

    @classmethod
    def from_json(cls, d) -> "Detection":
        try:
            x, y, w, h = d["box"]
            c = int(d["class"])
            return cls(RoiBox(x, y, w, h, c), c, float(d["score"]))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"bad prediction record {d!r}") from e


@dataclass
class DetectorConfig:
    template_size: tuple[int, int] = (7, 7)
    score_thresh: float = 0.5
    nms_iou: float = 0.3
    bias: float = 0.0


@dataclass
class DetectorWeights:
    templates: np.ndarray  # (C, th, tw) means of normalised crops
    counts: np.ndarray  # exemplars per class
    config: DetectorConfig = field(default_factory=DetectorConfig)
    precision: str = "fp64"
    act_params: QuantParams | None = None
    kernel_granularity: str = "per_channel"

    @property
    def n_classes(self) -> int:
        return self.templates.shape[0]

    def kernels(self) -> np.ndarray:
        """Unit-norm, zero-mean kernels rounded to the storage precision (fp paths)."""
        k = np.stack([normalize_crop(t) for t in self.templates])
        if self.precision == "int8":
            return k
        return round_to_precision(k, self.precision)

    def quantized_kernels(self):
        k = np.stack([normalize_crop(t) for t in self.templates])[:, None]
        axis = 0 if self.kernel_granularity == "per_channel" else None
        return quantize(k, calibrate(k, symmetry="symmetric", axis=axis))

    def as_precision(
        self,
        precision: str,
        calib_images=None,
        scheme: str = "minmax",
        symmetry: str = "asymmetric",
        percentile: float = 99.99,
        granularity: str | None = None,
    ) -> "DetectorWeights":
        """Same templates tagged for ``precision``; int8 calibrates the input range offline."""
        if precision not in ("fp64", *PRECISIONS):
            raise ValueError(f"unknown precision {precision!r}")
        act = None
        if precision == "int8":
            if calib_images is None:
                raise ValueError("int8 needs calibration images for the activation range")
            values = np.concatenate([np.ravel(im) for im in calib_images])
            act = calibrate(values, scheme=scheme, symmetry=symmetry, percentile=percentile)
        gran = granularity or self.kernel_granularity
        return DetectorWeights(self.templates, self.counts, self.config, precision, act, gran)

    def to_json(self) -> dict:
        return {
            "templates": self.templates.tolist(),
            "counts": self.counts.tolist(),
            "config": {**self.config.__dict__, "template_size": list(self.config.template_size)},
            "precision": self.precision,
            "act_params": None if self.act_params is None else self.act_params.to_json(),
            "kernel_granularity": self.kernel_granularity,
        }

    @classmethod
    def from_json(cls, d) -> "DetectorWeights":
        cfg = dict(d["config"])
        cfg["template_size"] = tuple(cfg["template_size"])
        act = None if d.get("act_params") is None else QuantParams.from_json(d["act_params"])
        return cls(
            np.array(d["templates"], dtype=np.float64),
            np.array(d["counts"]),
            DetectorConfig(**cfg),
            d["precision"],
            act,
            d.get("kernel_granularity", "per_channel"),
        )


def normalize_crop(crop) -> np.ndarray:
    c = np.asarray(crop, dtype=np.float64)
    c = c - c.mean()
    n = np.sqrt(np.sum(c * c))
    return c / n if n > 0 else c


def center_crop(image, box: RoiBox, size) -> np.ndarray:
    """Fixed-size crop centred on ``box``; outside the image reads as zero."""
    th, tw = size
    H, W = image.shape
    y0 = int(np.floor(box.y + box.h / 2 - th / 2 + 0.5))
    x0 = int(np.floor(box.x + box.w / 2 - tw / 2 + 0.5))
    out = np.zeros((th, tw))
    ys, xs = max(y0, 0), max(x0, 0)
    ye, xe = min(y0 + th, H), min(x0 + tw, W)
    if ye > ys and xe > xs:
        out[ys - y0 : ye - y0, xs - x0 : xe - x0] = image[ys:ye, xs:xe]
    return out


def _load_default(path):
    return load_tensor(path).numpy()


def train_template_detector(manifest, config: DetectorConfig | None = None, n_classes=None, load=None):
    """Average the normalised crops of every labelled box, per class."""
    config = config or DetectorConfig()
    load = load or _load_default
    items = list(manifest)
    if not items:
        raise EmptyClass("empty manifest")
    crops: dict[int, list] = {}
    for it in items:
        img = np.asarray(load(it.path), dtype=np.float64)
        for b in it.boxes:
            crops.setdefault(b.cls, []).append(normalize_crop(center_crop(img, b, config.template_size)))
    C = n_classes if n_classes is not None else (max(crops) + 1 if crops else 0)
    missing = [c for c in range(C) if c not in crops]
    if missing or C == 0:
        raise EmptyClass(f"no exemplars for classes {missing or 'any'}")
    templates = np.stack([np.mean(crops[c], axis=0) for c in range(C)])
    counts = np.array([len(crops[c]) for c in range(C)])
    return DetectorWeights(templates, counts, config)


def _window_norms(image, th, tw) -> np.ndarray:
    """||w - mean(w)|| for every valid window."""
    win = sliding_window_view(image, (th, tw))
    s1 = win.sum(axis=(-1, -2))
    s2 = (win * win).sum(axis=(-1, -2))
    return np.sqrt(np.maximum(s2 - s1 * s1 / (th * tw), 0.0))


def correlation_map(image, weights: DetectorWeights) -> np.ndarray:
    """(C, H - th + 1, W - tw + 1) normalised cross-correlation scores."""
    img = np.asarray(image, dtype=np.float64)
    th, tw = weights.templates.shape[1:]
    if img.ndim != 2 or img.shape[0] < th or img.shape[1] < tw:
        raise ShapeMismatch(f"image {img.shape} smaller than template {(th, tw)}")
    if weights.precision == "int8":
        if weights.act_params is None:
            raise ValueError("int8 weights lack activation params")
        xq = quantize(img[None], weights.act_params)
        num = qconv2d(xq, weights.quantized_kernels()).numpy()
        s, z = weights.act_params.scale, weights.act_params.zero_point
        img = s * (xq.payload[0].astype(np.float64) - z)
    else:
        # correlate against centred windows so a kernel that is only nearly
        # zero-mean (after rounding) cannot pick up the window mean
        k = weights.kernels()
        win = sliding_window_view(img, (th, tw))
        num = np.einsum("hwij,cij->chw", win, k)
        num -= (win.mean(axis=(-1, -2)))[None] * k.sum(axis=(-1, -2))[:, None, None]
    den = _window_norms(img, th, tw)
    # blank windows cannot correlate with anything
    eps = 1e-9 * max(1.0, float(np.max(den)) if den.size else 1.0)
    return np.where(den > eps, num / np.where(den > eps, den, 1.0), 0.0)


def nms(dets, thresh: float) -> list[Detection]:
    """Greedy suppression by descending score; ties keep input order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(k.cls != d.cls or iou(k.box, d.box) <= thresh for k in kept):
            kept.append(d)
    return kept


def detect(image, weights: DetectorWeights, precision=None, score_thresh=None, nms_iou=None) -> list[Detection]:
    if precision is not None and precision != weights.precision:
        if precision == "int8" and weights.act_params is None:
            weights = weights.as_precision("int8", [image])
        else:
            weights = DetectorWeights(
                weights.templates, weights.counts, weights.config, precision, weights.act_params, weights.kernel_granularity
            )
    cfg = weights.config
    thresh = cfg.score_thresh if score_thresh is None else score_thresh
    nms_iou = cfg.nms_iou if nms_iou is None else nms_iou
    scores = np.clip(correlation_map(image, weights) + cfg.bias, 0.0, 1.0)
    th, tw = weights.templates.shape[1:]
    cand = []
    for c, y, x in zip(*np.nonzero(scores >= thresh)):
        if scores[c, y, x] > 0:
            cand.append(Detection(RoiBox(int(x), int(y), tw, th, int(c)), int(c), float(scores[c, y, x])))
    return nms(cand, nms_iou)


# |s_fp16 - s_fp32| <= ||k_fp16 - k_fp32|| for unit-norm k and centred windows
FP16_SCORE_BOUND = 2.0**-11 + 2.0**-24 + 1e-12


def agreement(ref, other, delta: float, score_thresh: float, nms_iou: float) -> dict:
    """Compare two detection lists for the same image under a score-perturbation bound.

    Detections are paired by (class, box). A detection present on one side
    only is *explained* when its score sits within ``delta`` of the threshold
    or an overlapping same-class rival is within ``2 * delta`` of it, since
    either can flip under a ``delta`` perturbation.
    """
    key = lambda d: (d.cls, d.box.x, d.box.y, d.box.w, d.box.h)  # noqa: E731
    a = {key(d): d for d in ref}
    b = {key(d): d for d in other}
    gaps = [abs(a[k].score - b[k].score) for k in a.keys() & b.keys()]

    def explained(d, pool):
        if d.score < score_thresh + delta:
            return True
        return any(
            e.cls == d.cls and iou(e.box, d.box) > nms_iou and abs(e.score - d.score) <= 2 * delta for e in pool
        )

    lone = [d for k, d in a.items() if k not in b] + [d for k, d in b.items() if k not in a]
    unexplained = sum(not explained(d, list(ref) + list(other)) for d in lone)
    return {"max_gap": max(gaps, default=0.0), "unmatched": len(lone), "unexplained": unexplained}


def write_predictions(per_image: dict, path) -> None:
    with open(path, "w") as f:
        for image, dets in per_image.items():
            for d in dets:
                f.write(json.dumps(d.to_json(image), sort_keys=True) + "\n")


def read_predictions(path) -> dict:
    out: dict = {}
    with open(path) as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                out.setdefault(rec.get("image"), []).append(Detection.from_json(rec))
    return out


# --- toy world ---


def class_patterns(size: int = 7) -> np.ndarray:
    """Two fixed motifs: a plus sign and a hollow square."""
    plus = np.zeros((size, size))
    plus[size // 2, 1:-1] = 1.0
    plus[1:-1, size // 2] = 1.0
    ring = np.zeros((size, size))
    ring[1:-1, 1:-1] = 1.0
    ring[2:-2, 2:-2] = 0.0
    return np.stack([plus, ring])


@dataclass
class ToyWorld:
    """32x32 noise images carrying a few non-overlapping 7x7 motif instances."""

    size: int = 32
    obj: int = 7
    noise: float = 0.35
    amp_range: tuple[float, float] = (0.7, 1.3)
    shape_noise: float = 0.25
    max_objects: int = 3

    @property
    def n_classes(self) -> int:
        return 2

    def instance(self, cls: int, rng) -> np.ndarray:
        p = class_patterns(self.obj)[cls]
        amp = rng.uniform(*self.amp_range)
        return amp * p * (1.0 + self.shape_noise * rng.standard_normal(p.shape))

    def image(self, rng, n_objects=None) -> tuple[np.ndarray, list[RoiBox]]:
        img = self.noise * rng.standard_normal((self.size, self.size))
        k = int(rng.integers(1, self.max_objects + 1)) if n_objects is None else n_objects
        boxes: list[RoiBox] = []
        for _ in range(k):
            cls = int(rng.integers(0, self.n_classes))
            m = generate_mask((self.size, self.size), boxes, (self.obj, self.obj), rng, target_class=cls)
            b = m.placement
            img[b.y : b.y2, b.x : b.x2] += self.instance(cls, rng)
            boxes.append(b)
        return img, boxes

    def dataset(self, n: int, rng) -> tuple[list[np.ndarray], list[list[RoiBox]]]:
        pairs = [self.image(rng) for _ in range(n)]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def context_crops(self, n: int, margin: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Object-centred crops with ``margin`` px of background, plus class labels."""
        c = self.obj + 2 * margin
        labels = rng.integers(0, self.n_classes, n)
        out = self.noise * rng.standard_normal((n, c, c))
        for i, cls in enumerate(labels):
            out[i, margin : margin + self.obj, margin : margin + self.obj] += self.instance(int(cls), rng)
        return out, labels


def manifest_from_arrays(prefix: str, images, boxes, provenance="original", seed=None):
    store = {f"{prefix}/{i:05d}": img for i, img in enumerate(images)}
    items = [ManifestItem(f"{prefix}/{i:05d}", list(b), provenance, seed) for i, b in enumerate(boxes)]
    return items, store


def save_images(store: dict, root) -> None:
    root = Path(root)
    for key, img in store.items():
        p = root / (key + ".iqt")
        p.parent.mkdir(parents=True, exist_ok=True)
        save_tensor(Tensor(img), p)
