"""Toy epsilon-prediction network and its training loop.

A three-layer SiLU MLP over ``[x, sinusoidal(t), onehot(class)]``. The last
one-hot slot is the null class used for unconditional predictions, which is
what classifier-free guidance needs.

Master weights are float64. ``as_precision`` returns a copy whose forward
pass uses fp32/fp16 storage-rounded weights, or int8 weights and activations
run through :func:`inpaintq.quant.qmatmul`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import _alloc
from ..errors import NonFiniteLoss, ShapeMismatch
from ..quant import QuantParams, calibrate, qmatmul, quantize
from ..tensor import Tensor, load_tensor, round_to_precision, save_tensor
from .schedule import NoiseSchedule

PRECISIONS = ("fp64", "fp32", "fp16", "int8")
_LAYERS = ("1", "2", "3")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (n, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(z):
    return z / (1.0 + np.exp(-z))


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


@dataclass
class DenoiserConfig:
    sample_shape: tuple[int, ...] = (2,)
    n_classes: int = 0
    hidden: int = 128
    temb_dim: int = 32
    seed: int = 0

    @property
    def data_dim(self) -> int:
        return math.prod(self.sample_shape)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 256
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    p_uncond: float = 0.1
    seed: int = 0
    lr_decay: bool = True


class Denoiser:
    """Class-conditional epsilon predictor. ``model(x, t, cond)`` returns eps-hat shaped like ``x``."""

    def __init__(self, config: DenoiserConfig, weights: dict | None = None, precision: str = "fp64"):
        self.config = config
        self.precision = precision
        self.loss_history: list[float] = []
        self.weights = weights if weights is not None else self._init_weights()
        self._act_params: dict[str, QuantParams] = {}
        self._qweights = {}
        self._weight_axis: int | None = 1
        self._eff = {}
        if precision in ("fp64", "fp32", "fp16"):
            self._eff = {k: round_to_precision(v, precision) for k, v in self.weights.items()}
        elif precision != "int8":
            raise ValueError(f"unknown precision {precision!r}")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.config.sample_shape)

    @property
    def null_class(self) -> int:
        return self.config.n_classes

    @property
    def in_dim(self) -> int:
        return self.config.data_dim + self.config.temb_dim + self.config.n_classes + 1

    def param_count(self) -> int:
        return sum(int(v.size) for v in self.weights.values())

    def _init_weights(self):
        c = self.config
        rng = np.random.default_rng(c.seed)
        dims = [self.in_dim, c.hidden, c.hidden, c.data_dim]
        w = {}
        for i, name in enumerate(_LAYERS):
            fan_in, fan_out = dims[i], dims[i + 1]
            scale = 1.0 / math.sqrt(fan_in)
            if name == "3":
                scale *= 0.1
            w["W" + name] = rng.standard_normal((fan_in, fan_out)) * scale
            w["b" + name] = np.zeros(fan_out)
        return w

    def _features(self, x, t, cond):
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        if cond is None:
            cond = np.full(n, self.null_class)
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
        onehot = np.zeros((n, self.config.n_classes + 1))
        onehot[np.arange(n), cond] = 1.0
        return np.concatenate(
            [x.reshape(n, -1), timestep_embedding(t, self.config.temb_dim), onehot], axis=1
        )

    def _linear(self, name, h):
        if self.precision == "int8":
            qh = quantize(h, self._act_params[name])
            out = qmatmul(qh, self._qweights[name]).numpy() + self.weights["b" + name]
        else:
            out = h @ self._eff["W" + name] + self._eff["b" + name]
        return _alloc.track(out)

    def _forward(self, x, t, cond, keep=False):
        h0 = _alloc.track(self._features(x, t, cond))
        z1 = self._linear("1", h0)
        a1 = _silu(z1)
        z2 = self._linear("2", a1)
        a2 = _silu(z2)
        out = self._linear("3", a2)
        if keep:
            return out, (h0, z1, a1, z2, a2)
        return out

    def __call__(self, x, t, cond=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.sample_shape and x.shape[1:] != (self.config.data_dim,):
            raise ShapeMismatch(f"expected samples of shape {self.sample_shape}, got {x.shape[1:]}")
        return self._forward(x, t, cond).reshape(x.shape)

    # --- precision variants ---

    def layer_inputs(self, x, t, cond):
        """Inputs seen by each linear layer (used for activation calibration)."""
        _, (h0, _, a1, _, a2) = self._forward(np.asarray(x, dtype=np.float64), t, cond, keep=True)
        return {"1": h0, "2": a1, "3": a2}

    def as_precision(
        self,
        precision: str,
        calib=None,
        scheme: str = "minmax",
        symmetry: str = "asymmetric",
        granularity: str = "per_channel",
        percentile: float = 99.99,
    ) -> "Denoiser":
        """Copy of this model running at ``precision``.

        int8 needs ``calib=(x, t, cond)``: a held-out batch whose layer inputs
        fix the activation ranges. Weights are quantized symmetric, per output
        channel unless ``granularity="per_tensor"``.
        """
        base = Denoiser(self.config, self.weights, "fp64")
        if precision != "int8":
            m = Denoiser(self.config, self.weights, precision)
            m.loss_history = list(self.loss_history)
            return m
        if calib is None:
            raise ValueError("int8 conversion needs a calibration batch")
        acts = base.layer_inputs(*calib)
        m = Denoiser(self.config, self.weights, "int8")
        m.loss_history = list(self.loss_history)
        m._weight_axis = 1 if granularity == "per_channel" else None
        m._set_int8({name: calibrate(acts[name], scheme, symmetry, percentile) for name in _LAYERS})
        return m

    def _set_int8(self, act_params: dict):
        self._act_params = dict(act_params)
        for name in _LAYERS:
            w = self.weights["W" + name]
            self._qweights[name] = quantize(w, calibrate(w, "minmax", "symmetric", axis=self._weight_axis))

    def storage_bytes(self) -> int:
        per = {"fp64": 8, "fp32": 4, "fp16": 2, "int8": 1}[self.precision]
        return self.param_count() * per

    # --- persistence ---

    def save(self, directory):
        """JSON manifest plus one tensor file per weight."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, arr in self.weights.items():
            files[name] = f"{name}.bin"
            save_tensor(Tensor(arr), d / files[name])
        manifest = {
            "config": asdict(self.config),
            "precision": self.precision,
            "tensors": files,
            "activation_params": {k: p.to_json() for k, p in self._act_params.items()},
            "weight_axis": self._weight_axis,
            "loss_history": self.loss_history,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "Denoiser":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        cfg = manifest["config"]
        cfg["sample_shape"] = tuple(cfg["sample_shape"])
        config = DenoiserConfig(**cfg)
        weights = {k: np.array(load_tensor(d / f).numpy()) for k, f in manifest["tensors"].items()}
        m = cls(config, weights, manifest["precision"])
        m.loss_history = manifest.get("loss_history", [])
        if m.precision == "int8":
            m._weight_axis = manifest.get("weight_axis", 1)
            m._set_int8(
                {k: QuantParams.from_json(v) for k, v in manifest["activation_params"].items()}
            )
        return m


def smoothed_loss(history, window: int = 50) -> tuple[float, float]:
    """Mean of the first and of the last ``window`` recorded losses."""
    h = np.asarray(history, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty loss history")
    w = min(window, h.size)
    return float(h[:w].mean()), float(h[-w:].mean())


def train_toy_denoiser(
    dataset,
    sched: NoiseSchedule,
    config: TrainConfig | None = None,
    model_config: DenoiserConfig | None = None,
    labels=None,
) -> Denoiser:
    """Minimise the epsilon-prediction MSE with Adam on random (x0, t, eps) draws.

    ``dataset`` is (n, *sample_shape); ``labels`` (n,) enables class
    conditioning, with labels replaced by the null class at rate ``p_uncond``.
    """
    config = config or TrainConfig()
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim < 2 or data.shape[0] == 0:
        raise ShapeMismatch("dataset must be a nonempty batch of samples")
    if model_config is None:
        n_classes = 0 if labels is None else int(np.max(labels)) + 1
        model_config = DenoiserConfig(sample_shape=data.shape[1:], n_classes=n_classes, seed=config.seed)
    model = Denoiser(model_config)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    n = data.shape[0]
    flat = data.reshape(n, -1)
    rng = np.random.default_rng(config.seed)
    w = model.weights
    m1 = {k: np.zeros_like(v) for k, v in w.items()}
    m2 = {k: np.zeros_like(v) for k, v in w.items()}

    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n, config.batch_size)
        x0 = flat[idx]
        t = rng.integers(1, sched.T + 1, config.batch_size)
        eps = rng.standard_normal(x0.shape)
        ab = sched.alpha_bar[t - 1][:, None]
        xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        if labels is None:
            cond = None
        else:
            cond = labels[idx].copy()
            cond[rng.random(config.batch_size) < config.p_uncond] = model.null_class
        model._eff = w
        with np.errstate(over="ignore", invalid="ignore"):
            out, (h0, z1, a1, z2, a2) = model._forward(xt, t, cond, keep=True)
            diff = out - eps
            loss = float(np.mean(diff**2))
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {step}")
        model.loss_history.append(loss)

        g_out = 2.0 * diff / diff.size
        grads = {"W3": a2.T @ g_out, "b3": g_out.sum(0)}
        g_z2 = (g_out @ w["W3"].T) * _silu_grad(z2)
        grads["W2"] = a1.T @ g_z2
        grads["b2"] = g_z2.sum(0)
        g_z1 = (g_z2 @ w["W2"].T) * _silu_grad(z1)
        grads["W1"] = h0.T @ g_z1
        grads["b1"] = g_z1.sum(0)

        lr = config.lr
        if config.lr_decay:
            lr *= 0.5 * (1.0 + math.cos(math.pi * (step - 1) / config.steps))
        c1 = 1.0 - config.beta1**step
        c2 = 1.0 - config.beta2**step
        for k in w:
            m1[k] = config.beta1 * m1[k] + (1 - config.beta1) * grads[k]
            m2[k] = config.beta2 * m2[k] + (1 - config.beta2) * grads[k] ** 2
            w[k] = w[k] - lr * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + 1e-8)

    model.weights = w
    model._eff = {k: v for k, v in w.items()}
    return model


def calibration_batch(dataset, sched: NoiseSchedule, n: int, seed: int, labels=None, null_class=None):
    """Forward-diffused held-out samples at random steps, for int8 activation calibration."""
    data = np.asarray(dataset, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.shape[0], n)
    t = rng.integers(1, sched.T + 1, n)
    eps = rng.standard_normal((n, *data.shape[1:]))
    x0 = data[idx]
    ab = sched.alpha_bar[t - 1].reshape(-1, *([1] * (data.ndim - 1)))
    xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    if labels is None:
        cond = None
    else:
        cond = np.asarray(labels)[idx]
        null = int(np.max(labels)) + 1 if null_class is None else null_class
        cond = np.where(rng.random(n) < 0.5, cond, null)
    return xt, t, cond
