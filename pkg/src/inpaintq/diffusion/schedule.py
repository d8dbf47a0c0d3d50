"""Noise schedule and the closed-form pieces of the DDPM forward/reverse process.

Timesteps are 1-based: ``beta[t-1]`` is the variance added at step ``t`` and
``alpha_bar(0) == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidSchedule, ShapeMismatch, StepOutOfRange
from ..tensor import as_array


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        b = np.array(betas, dtype=np.float64).reshape(-1)
        if b.size < 1:
            raise InvalidSchedule("schedule needs at least one step")
        if np.any(b <= 0) or np.any(b >= 1):
            raise InvalidSchedule("every beta must lie in (0, 1)")
        ab = np.cumprod(1.0 - b)
        b.flags.writeable = False
        ab.flags.writeable = False
        return cls(b, ab)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def check_step(self, t: int):
        if not 1 <= t <= self.T:
            raise StepOutOfRange(f"step {t} outside [1, {self.T}]")

    def beta_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self.check_step(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        """Noise-to-signal ratio sqrt((1 - abar) / abar) used by the Euler samplers."""
        ab = self.alpha_bar_at(t)
        return float(np.sqrt((1.0 - ab) / ab))

    def to_json(self) -> dict:
        return {"beta": self.beta.tolist()}


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear") -> NoiseSchedule:
    if T < 1:
        raise InvalidSchedule(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidSchedule(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind != "linear":
        raise InvalidSchedule(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def _same_shape(a, b):
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0, eps = _same_shape(x0, eps)
    sched.check_step(t)
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_step(x_prev, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """One Markov transition q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I)."""
    x_prev, eps = _same_shape(x_prev, eps)
    b = sched.beta_at(t)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * eps


def posterior_mean(x_t, eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    """mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)."""
    x_t, eps_hat = _same_shape(x_t, eps_hat)
    b = sched.beta_at(t)
    ab = sched.alpha_bar_at(t)
    return (x_t - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(1.0 - b)


def reverse_sigma(t: int, sched: NoiseSchedule) -> float:
    """Fixed reverse-process std: sqrt(beta_t), and exactly 0 on the last step."""
    return 0.0 if t == 1 else float(np.sqrt(sched.beta_at(t)))


def mse_loss(eps, eps_hat) -> float:
    eps, eps_hat = _same_shape(eps, eps_hat)
    return float(np.mean((eps - eps_hat) ** 2))
