"""Quantized diffusion-inpainting augmentation toolkit.

Subpackages and modules: ``tensor`` and ``quant`` (numeric formats), ``diffusion``
(toy DDPM engine), ``augment`` (mask placement and sweep planning), ``toydet``
(template detector), ``metrics`` (AP/mAP), ``stats`` (Friedman, Wilcoxon,
letter groups), ``bench`` (timing and sizes) and ``cli``.
"""
from . import augment, bench, metrics, quant, stats, tensor, toydet
from .errors import InpaintQError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "InpaintQError", "augment", "bench", "metrics", "quant", "stats", "tensor", "toydet", "__version__"]
