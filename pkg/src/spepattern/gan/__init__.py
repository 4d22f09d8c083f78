from .checkpoint import Checkpoint, generate, load_checkpoint, sample_images, sample_latents, save_checkpoint
from .diffaug import AugParams, diffaug, sample_aug_params
from .layers import Conv3x3, Dense, EfficientAttention, Module, efficient_attention
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)
from .train import RunResult, StepLosses, TrainConfig, generator_objective, train_loop, train_step

__all__ = [
    "AugParams",
    "Checkpoint",
    "Conv3x3",
    "Dense",
    "Discriminator",
    "DiscriminatorConfig",
    "EfficientAttention",
    "Generator",
    "GeneratorConfig",
    "Module",
    "RunResult",
    "StepLosses",
    "TrainConfig",
    "build_discriminator",
    "build_generator",
    "diffaug",
    "efficient_attention",
    "generate",
    "generator_objective",
    "load_checkpoint",
    "sample_aug_params",
    "sample_images",
    "sample_latents",
    "save_checkpoint",
    "train_loop",
    "train_step",
]
