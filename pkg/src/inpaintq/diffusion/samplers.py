"""Ancestral DDPM, DDIM and Euler-Ancestral samplers.

All samplers walk a strided sub-schedule ``tau_S > ... > tau_1`` (with
``tau_0 = 0``, ``abar(0) = 1``) and return samples in data space.

Euler-Ancestral works in sigma space, ``x_sigma = x_t / sqrt(abar_t)`` with
``sigma_t = sqrt((1 - abar_t) / abar_t)``, where the ODE is
``dx/dsigma = eps``. Each step from ``sigma`` to ``sigma_next`` splits the
target noise level into a deterministic part and a fresh-noise part:

    sigma_up   = min(sigma_next, eta * sqrt(sigma_next^2 (sigma^2 - sigma_next^2) / sigma^2))
    sigma_down = sqrt(sigma_next^2 - sigma_up^2)
    x <- x + eps * (sigma_down - sigma) + sigma_up * z

With ``eta = 0`` this is plain Euler, which coincides with DDIM (eta = 0).
"""
from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .. import _alloc
from .schedule import NoiseSchedule, posterior_mean, reverse_sigma


def sub_schedule(sched: NoiseSchedule, steps: int) -> np.ndarray:
    """Increasing timesteps ``tau_1 .. tau_S`` evenly spread over ``[1, T]``."""
    if not 1 <= steps <= sched.T:
        raise ValueError(f"steps must lie in [1, {sched.T}], got {steps}")
    if steps == 1:
        return np.array([sched.T])
    taus = np.rint(np.linspace(1, sched.T, steps)).astype(np.int64)
    assert np.all(np.diff(taus) > 0)
    return taus


def guided_eps(model, x, t, condition=None, guidance: float = 1.0) -> np.ndarray:
    """Classifier-free guidance: eps_u + w (eps_c - eps_u)."""
    if condition is None:
        return model(x, t, None)
    if guidance == 1.0:
        return model(x, t, condition)
    eps_u = model(x, t, None)
    if guidance == 0.0:
        return eps_u
    eps_c = model(x, t, condition)
    return eps_u + guidance * (eps_c - eps_u)


def _shape(model, n):
    return (n, *model.sample_shape)


def reverse_step(x_t, t: int, model, sched: NoiseSchedule, rng, condition=None, guidance: float = 1.0):
    """Draw x_{t-1} ~ N(mu_theta(x_t, t), beta_t I); deterministic at t == 1."""
    x_t = np.asarray(x_t, dtype=np.float64)
    mean = posterior_mean(x_t, guided_eps(model, x_t, t, condition, guidance), t, sched)
    sigma = reverse_sigma(t, sched)
    if sigma == 0.0:
        return mean
    return mean + sigma * rng.standard_normal(x_t.shape)


def sample_ddpm(model, sched, rng, condition=None, n: int = 1, guidance: float = 1.0):
    """Full-length ancestral sampling with :func:`reverse_step`."""
    x = rng.standard_normal(_shape(model, n))
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, t, model, sched, rng, condition, guidance)
    return x


Blend = Callable[[np.ndarray, int], np.ndarray]


def _run_ddim(model, sched, taus, x, rng, condition, guidance, eta, blend: Blend | None):
    for i in range(len(taus) - 1, -1, -1):
        t = int(taus[i])
        s = int(taus[i - 1]) if i > 0 else 0
        ab_t, ab_s = sched.alpha_bar_at(t), sched.alpha_bar_at(s)
        eps = guided_eps(model, x, t, condition, guidance)
        x0_hat = _alloc.track((x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t))
        if s == 0:
            x = x0_hat
        else:
            sigma = eta * np.sqrt((1 - ab_s) / (1 - ab_t)) * np.sqrt(1 - ab_t / ab_s)
            x = np.sqrt(ab_s) * x0_hat + np.sqrt(1 - ab_s - sigma**2) * eps
            if sigma > 0:
                x = x + sigma * rng.standard_normal(x.shape)
        x = _alloc.track(x)
        if blend is not None:
            x = blend(x, s)
    return x


def _run_euler_ancestral(model, sched, taus, x, rng, condition, guidance, eta, blend: Blend | None):
    # x arrives in variance-preserving form at taus[-1]; work in sigma space
    x = x * np.sqrt(1.0 + sched.sigma_at(int(taus[-1])) ** 2)
    for i in range(len(taus) - 1, -1, -1):
        t = int(taus[i])
        s = int(taus[i - 1]) if i > 0 else 0
        sig, sig_next = sched.sigma_at(t), sched.sigma_at(s)
        eps = guided_eps(model, x / np.sqrt(1.0 + sig**2), t, condition, guidance)
        sig_up = min(sig_next, eta * np.sqrt(sig_next**2 * (sig**2 - sig_next**2) / sig**2))
        sig_down = np.sqrt(sig_next**2 - sig_up**2)
        x = _alloc.track(x + eps * (sig_down - sig))
        if sig_up > 0:
            x = x + sig_up * rng.standard_normal(x.shape)
        if blend is not None:
            scale = np.sqrt(1.0 + sig_next**2)
            x = blend(x / scale, s) * scale
    return x


def run_sampler(
    kind: str,
    model,
    sched: NoiseSchedule,
    steps: int,
    rng,
    condition=None,
    n: int = 1,
    guidance: float = 1.0,
    eta: float | None = None,
    x_init=None,
    start: int | None = None,
    blend: Blend | None = None,
):
    """Shared driver. ``start`` is how many sub-schedule steps to run (default all)."""
    taus = sub_schedule(sched, steps)
    if start is not None:
        taus = taus[:start]
    if len(taus) == 0:
        raise ValueError("nothing to sample: zero steps")
    x = rng.standard_normal(_shape(model, n)) if x_init is None else np.array(x_init, dtype=np.float64)
    if kind == "ddim":
        return _run_ddim(model, sched, taus, x, rng, condition, guidance, 0.0 if eta is None else eta, blend)
    if kind in ("euler_ancestral", "euler_a"):
        return _run_euler_ancestral(
            model, sched, taus, x, rng, condition, guidance, 1.0 if eta is None else eta, blend
        )
    raise ValueError(f"unknown sampler {kind!r}")


def sample_ddim(model, sched, steps, rng, condition=None, n=1, guidance=1.0, eta=0.0):
    return run_sampler("ddim", model, sched, steps, rng, condition, n, guidance, eta)


def sample_euler_ancestral(model, sched, steps, rng, condition=None, n=1, guidance=1.0, eta=1.0):
    return run_sampler("euler_ancestral", model, sched, steps, rng, condition, n, guidance, eta)


SAMPLERS = {"ddim": sample_ddim, "euler_ancestral": sample_euler_ancestral}
