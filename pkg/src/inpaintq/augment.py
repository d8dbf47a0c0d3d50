"""ROI-avoiding mask placement, augmentation sweep planning and dataset assembly."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientPool, PlacementExhausted, SchemaError

PERCENTS = tuple(range(10, 201, 10))


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box; (x, y) is the top-left corner, area is ``w * h``."""

    x: float
    y: float
    w: float
    h: float
    cls: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got {self.w}x{self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def intersects(self, other: "RoiBox") -> bool:
        """True when the overlap has positive area; shared edges do not count."""
        return min(self.x2, other.x2) > max(self.x, other.x) and min(self.y2, other.y2) > max(self.y, other.y)

    def inside(self, dims) -> bool:
        H, W = dims
        return self.x >= 0 and self.y >= 0 and self.x2 <= W and self.y2 <= H

    def clipped(self, dims) -> "RoiBox":
        H, W = dims
        x, y = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, W), min(self.y2, H)
        return RoiBox(x, y, x2 - x, y2 - y, self.cls)

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "cls": self.cls}

    @classmethod
    def from_json(cls, d) -> "RoiBox":
        try:
            return cls(d["x"], d["y"], d["w"], d["h"], int(d.get("cls", 0)))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"bad box record {d!r}") from e


@dataclass(frozen=True)
class MaskSpec:
    placement: RoiBox
    target_class: int
    seed: int | None = None

    def to_array(self, dims) -> np.ndarray:
        """Binary (H, W) mask, 1 inside the placement."""
        m = np.zeros(dims, dtype=np.uint8)
        b = self.placement
        m[int(b.y) : int(b.y2), int(b.x) : int(b.x2)] = 1
        return m


def _size_bounds(size_range):
    """Accept ``(lo, hi)`` for square-ish sizes or ``((hlo, hhi), (wlo, whi))``."""
    size_range = tuple(size_range)
    if np.ndim(size_range[0]) == 0:
        return (int(size_range[0]), int(size_range[1])), (int(size_range[0]), int(size_range[1]))
    (hlo, hhi), (wlo, whi) = size_range
    return (int(hlo), int(hhi)), (int(wlo), int(whi))


def generate_mask(
    dims,
    excluded,
    size_range,
    rng,
    max_attempts: int = 1000,
    target_class: int = 0,
    seed: int | None = None,
) -> MaskSpec:
    """Rejection-sample an integer rectangle that overlaps none of ``excluded``.

    Height and width are uniform over ``size_range`` (inclusive); the corner is
    uniform over all positions keeping the box inside ``dims``.
    """
    H, W = dims
    (hlo, hhi), (wlo, whi) = _size_bounds(size_range)
    if not (1 <= hlo <= hhi <= H and 1 <= wlo <= whi <= W):
        raise ValueError(f"size range {size_range} does not fit in {dims}")
    excluded = list(excluded)
    for _ in range(max_attempts):
        h = int(rng.integers(hlo, hhi + 1))
        w = int(rng.integers(wlo, whi + 1))
        y = int(rng.integers(0, H - h + 1))
        x = int(rng.integers(0, W - w + 1))
        box = RoiBox(x, y, w, h, target_class)
        if not any(box.intersects(r) for r in excluded):
            return MaskSpec(box, target_class, seed)
    raise PlacementExhausted(f"no free placement after {max_attempts} attempts")


@dataclass(frozen=True)
class SweepPlan:
    n: int
    levels: tuple[tuple[int, int], ...]

    def count(self, percent: int) -> int:
        for p, c in self.levels:
            if p == percent:
                return c
        return synthetic_count(self.n, percent)


def synthetic_count(n: int, percent: int) -> int:
    """round_half_up(n * percent / 100) in exact integer arithmetic."""
    return (2 * int(n) * int(percent) + 100) // 200


def plan_sweep(n: int, percents=PERCENTS) -> SweepPlan:
    if n < 1:
        raise ValueError(f"dataset size must be positive, got {n}")
    return SweepPlan(int(n), tuple((int(p), synthetic_count(n, p)) for p in percents))


@dataclass
class ManifestItem:
    path: str
    boxes: list[RoiBox] = field(default_factory=list)
    provenance: str = "original"
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "boxes": [b.to_json() for b in self.boxes],
            "provenance": self.provenance,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d) -> "ManifestItem":
        try:
            prov = d["provenance"]
            if prov not in ("original", "synthetic"):
                raise SchemaError(f"unknown provenance {prov!r}")
            return cls(str(d["path"]), [RoiBox.from_json(b) for b in d["boxes"]], prov, d.get("seed"))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"bad manifest record {d!r}") from e


def assemble_dataset(original, synthetic_pool, level: int, seed: int) -> list[ManifestItem]:
    """Originals in order, then ``synthetic_count`` pool items drawn without replacement."""
    original, pool = list(original), list(synthetic_pool)
    k = synthetic_count(len(original), level)
    if k > len(pool):
        raise InsufficientPool(f"level {level}% needs {k} synthetic items, pool has {len(pool)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=k, replace=False) if k else []
    out = [ManifestItem(o.path, list(o.boxes), "original", o.seed) for o in original]
    out += [ManifestItem(pool[i].path, list(pool[i].boxes), "synthetic", pool[i].seed) for i in picks]
    return out


def write_manifest(items, path) -> None:
    with open(path, "w") as f:
        for it in items:
            f.write(json.dumps(it.to_json(), sort_keys=True) + "\n")


def read_manifest(path) -> list[ManifestItem]:
    items = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: {e}") from e
            items.append(ManifestItem.from_json(rec))
    return items


@dataclass(frozen=True)
class Jitter:
    """Uniform corner shift in ``[-shift, shift]`` px and size factor in ``[1 - scale, 1 + scale]``."""

    shift: float = 0.0
    scale: float = 0.0


def auto_annotate(mask: MaskSpec, dims, jitter: Jitter | None = None, rng=None) -> RoiBox:
    """Label box for a synthesised object: the placement, optionally perturbed and clipped."""
    b = mask.placement
    jitter = jitter or Jitter()
    if jitter.shift == 0 and jitter.scale == 0:
        return RoiBox(b.x, b.y, b.w, b.h, mask.target_class)
    if rng is None:
        raise ValueError("a generator is required for nonzero jitter")
    dx, dy = rng.uniform(-jitter.shift, jitter.shift, 2)
    sw, sh = rng.uniform(1 - jitter.scale, 1 + jitter.scale, 2)
    cx, cy = b.x + b.w / 2 + dx, b.y + b.h / 2 + dy
    w, h = b.w * sw, b.h * sh
    return RoiBox(cx - w / 2, cy - h / 2, w, h, mask.target_class).clipped(dims)


def to_yolo_lines(boxes, dims) -> list[str]:
    """Normalised ``class cx cy w h`` label lines."""
    H, W = dims
    return [
        f"{b.cls} {(b.x + b.w / 2) / W:.6f} {(b.y + b.h / 2) / H:.6f} {b.w / W:.6f} {b.h / H:.6f}"
        for b in boxes
    ]


def from_yolo_lines(lines, dims) -> list[RoiBox]:
    H, W = dims
    out = []
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise SchemaError(f"label line needs 5 fields: {line!r}")
        c, cx, cy, w, h = int(parts[0]), *map(float, parts[1:])
        out.append(RoiBox((cx - w / 2) * W, (cy - h / 2) * H, w * W, h * H, c))
    return out


def write_labels(boxes, dims, path) -> None:
    Path(path).write_text("".join(line + "\n" for line in to_yolo_lines(boxes, dims)))


def read_labels(path, dims) -> list[RoiBox]:
    return from_yolo_lines(Path(path).read_text().splitlines(), dims)
