"""Diffusion module - toy dataset, UNet noise predictor, DDIM sampler and training."""

from pathlib import Path
from typing import Union

from ..tensor import load_archive, save_archive
from .dataset import IMAGE_SIZE, Mode, ToyDataset, generate_dataset
from .sampler import CaptureHooks, SamplingError, ddim_step, initial_noise, sample, sample_trajectory
from .schedule import DiffusionError, NoiseSchedule, forward_diffuse
from .train import TrainingDivergedError, loss_ratio, train_toy
from .unet import (
    BLOCK_ORDER,
    LayerKind,
    LayerSpec,
    ToyUNet,
    UNetConfig,
    UNetState,
    sinusoidal_embedding,
)


def save_model(model: ToyUNet, path: Union[str, Path]) -> Path:
    """Write a model checkpoint archive."""
    return save_archive(path, model.to_records())


def load_model(path: Union[str, Path]) -> ToyUNet:
    """Read a model checkpoint archive."""
    return ToyUNet.from_records(load_archive(path))


__all__ = [
    "BLOCK_ORDER",
    "CaptureHooks",
    "DiffusionError",
    "IMAGE_SIZE",
    "LayerKind",
    "LayerSpec",
    "Mode",
    "NoiseSchedule",
    "SamplingError",
    "ToyDataset",
    "ToyUNet",
    "TrainingDivergedError",
    "UNetConfig",
    "UNetState",
    "ddim_step",
    "forward_diffuse",
    "generate_dataset",
    "initial_noise",
    "load_model",
    "loss_ratio",
    "sample",
    "sample_trajectory",
    "save_model",
    "sinusoidal_embedding",
    "train_toy",
]
