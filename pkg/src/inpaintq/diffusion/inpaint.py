"""Mask-conditioned inpainting on top of the samplers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MaskShapeMismatch
from .samplers import run_sampler, sub_schedule
from .schedule import NoiseSchedule, forward_diffuse

# Table-2 inference properties of the original pipeline
PUBLISHED_INFERENCE = {
    "scheduler": "euler_ancestral",
    "steps": 150,
    "guidance": 16.0,
    "strength": 0.5,
}


def start_index(strength: float, steps: int) -> int:
    """Number of denoising steps actually run: round-half-up(strength * steps)."""
    return int(np.floor(strength * steps + 0.5))


@dataclass
class InpaintRequest:
    """``image`` is (H, W) or a batch (N, H, W); ``mask`` is 1 where content is synthesised."""

    image: np.ndarray
    mask: np.ndarray
    condition: int | np.ndarray | None = None
    strength: float = 0.5
    steps: int = 150
    guidance: float = 16.0
    sampler: str = "euler_ancestral"

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask)
        if self.image.ndim == 2:
            self.image = self.image[None]
        if self.mask.ndim == 2 and self.mask.shape == self.image.shape[1:]:
            self.mask = np.broadcast_to(self.mask, self.image.shape)
        if self.mask.shape != self.image.shape:
            raise MaskShapeMismatch(f"mask {self.mask.shape} vs image {self.image.shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise MaskShapeMismatch("mask must be binary")
        self.mask = self.mask.astype(bool)
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength}")
        if self.steps < 1 or self.guidance < 0:
            raise ValueError("steps must be positive and guidance nonnegative")


def inpaint(req: InpaintRequest, model, sched: NoiseSchedule, rng) -> np.ndarray:
    """Synthesise the masked region; unmasked pixels come back bit-identical.

    The trajectory starts ``start_index(strength, steps)`` sub-steps from the
    end. At full strength the start is pure noise (exactly what the plain
    samplers draw); otherwise it is the forward-diffused image. After every
    step the unmasked region is reset to the original forward-diffused to the
    new noise level, using noise from a child stream so the main stream is
    consumed exactly as an unconditional sampler would.
    """
    image, mask = req.image, req.mask
    n = image.shape[0]
    if image.shape[1:] != tuple(model.sample_shape):
        raise MaskShapeMismatch(f"model expects {model.sample_shape}, image is {image.shape[1:]}")
    k = start_index(req.strength, req.steps)
    if k == 0 or not mask.any():
        return image.copy()

    taus = sub_schedule(sched, req.steps)
    if k == req.steps:
        x = rng.standard_normal(image.shape)
    else:
        x = forward_diffuse(image, int(taus[k - 1]), rng.standard_normal(image.shape), sched)

    blend = None
    if not mask.all():
        blend_rng = rng.spawn(1)[0]

        def blend(x_t, t):
            if t == 0:
                known = image
            else:
                known = forward_diffuse(image, t, blend_rng.standard_normal(image.shape), sched)
            return np.where(mask, x_t, known)

    x = run_sampler(
        req.sampler,
        model,
        sched,
        req.steps,
        rng,
        condition=req.condition,
        n=n,
        guidance=req.guidance,
        x_init=x,
        start=k,
        blend=blend,
    )
    return np.where(mask, x, image)
