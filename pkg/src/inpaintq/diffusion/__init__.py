"""Toy denoising-diffusion engine: schedule, denoiser, samplers and inpainting."""
from .inpaint import PUBLISHED_INFERENCE, InpaintRequest, inpaint, start_index
from .model import (
    Denoiser,
    DenoiserConfig,
    TrainConfig,
    calibration_batch,
    smoothed_loss,
    timestep_embedding,
    train_toy_denoiser,
)
from .samplers import (
    guided_eps,
    reverse_step,
    run_sampler,
    sample_ddim,
    sample_ddpm,
    sample_euler_ancestral,
    sub_schedule,
)
from .schedule import (
    NoiseSchedule,
    forward_diffuse,
    forward_step,
    make_schedule,
    mse_loss,
    posterior_mean,
    reverse_sigma,
)

__all__ = [
    "PUBLISHED_INFERENCE",
    "Denoiser",
    "DenoiserConfig",
    "InpaintRequest",
    "NoiseSchedule",
    "TrainConfig",
    "calibration_batch",
    "forward_diffuse",
    "forward_step",
    "guided_eps",
    "inpaint",
    "make_schedule",
    "mse_loss",
    "posterior_mean",
    "reverse_sigma",
    "reverse_step",
    "run_sampler",
    "sample_ddim",
    "sample_ddpm",
    "sample_euler_ancestral",
    "smoothed_loss",
    "start_index",
    "sub_schedule",
    "timestep_embedding",
    "train_toy_denoiser",
]
