"""Compact DCGAN-style generator and discriminator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..errors import ConfigError
from ..tensor import Tensor
from .layers import Conv3x3, Dense, EfficientAttention, Module

ATTENTION_RESOLUTIONS = (8, 16, 32)


@dataclass
class GeneratorConfig:
    z_dim: int = 64
    base_channels: int = 32
    n_upsample_blocks: int = 2
    attention: int | None = None  # feature resolution of the EAttn block, or None
    output_channels: int = 3

    @property
    def size(self) -> int:
        return 4 * 2**self.n_upsample_blocks

    @property
    def resolutions(self) -> list[int]:
        return [4 * 2 ** (i + 1) for i in range(self.n_upsample_blocks)]

    def validate(self) -> None:
        if self.z_dim < 1 or self.base_channels < 1 or self.output_channels < 1 or self.n_upsample_blocks < 0:
            raise ConfigError(f"invalid generator config {self}")
        if self.attention is not None:
            if self.attention not in ATTENTION_RESOLUTIONS:
                raise ConfigError(f"attention resolution must be one of {ATTENTION_RESOLUTIONS}, got {self.attention}")
            if self.attention not in self.resolutions:
                raise ConfigError(
                    f"attention at {self.attention}x{self.attention} is not on the upsampling path {self.resolutions}"
                )

    @classmethod
    def for_size(cls, size: int, **kw) -> GeneratorConfig:
        n = int(round(math.log2(size / 4))) if size >= 4 else -1
        if n < 0 or 4 * 2**n != size:
            raise ConfigError(f"generator size must be 4 * 2**k, got {size}")
        return cls(n_upsample_blocks=n, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscriminatorConfig:
    base_channels: int = 32
    input_size: int = 16
    input_channels: int = 3
    max_channels: int = 128

    def to_dict(self) -> dict:
        return asdict(self)


class Generator(Module):
    """z -> dense 4x4 map -> [upsample, conv, leaky_relu]* (+EAttn) -> conv -> tanh."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        c = cfg.base_channels
        self.fc = Dense(cfg.z_dim, c * 16, rng)
        self.blocks = [Conv3x3(c, c, rng) for _ in range(cfg.n_upsample_blocks)]
        self.attn = EfficientAttention(c, rng) if cfg.attention else None
        self.to_rgb = Conv3x3(c, cfg.output_channels, rng)

    def __call__(self, z: Tensor) -> Tensor:
        c = self.cfg.base_channels
        h = T.leaky_relu(T.reshape(self.fc(z), (z.shape[0], c, 4, 4)))
        res = 4
        for conv in self.blocks:
            h = T.leaky_relu(conv(T.upsample2x_nearest(h)))
            res *= 2
            if self.attn is not None and res == self.cfg.attention:
                h = self.attn(h)
        return T.tanh(self.to_rgb(h))


class Discriminator(Module):
    """Stride-2 conv stack down to 4x4, then a linear score per image."""

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.base_channels
        self.stem = Conv3x3(cfg.input_channels, c, rng)
        self.downs = []
        size = cfg.input_size
        while size > 4:
            c_out = min(2 * c, cfg.max_channels)
            self.downs.append(Conv3x3(c, c_out, rng, stride=2))
            c, size = c_out, (size + 1) // 2
        self.feat_shape = (c, size, size)
        self.head = Dense(c * size * size, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.leaky_relu(self.stem(x))
        for conv in self.downs:
            h = T.leaky_relu(conv(h))
        return self.head(T.reshape(h, (x.shape[0], -1)))


def build_generator(cfg: GeneratorConfig, seed) -> Generator:
    return Generator(cfg, np.random.default_rng(seed))


def build_discriminator(cfg: DiscriminatorConfig, seed) -> Discriminator:
    return Discriminator(cfg, np.random.default_rng(seed))
