"""Differentiable augmentation applied to discriminator inputs.

Parameters are sampled once (:func:`sample_aug_params`) and applied to both
real and generated batches so the discriminator sees identically
transformed images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, DimensionError
from ..tensor import Tensor

POLICIES = ("color", "translation", "cutout")


@dataclass(frozen=True)
class AugParams:
    policies: tuple[str, ...]
    brightness: np.ndarray | None = None  # [B] shift in [-0.5, 0.5)
    saturation: np.ndarray | None = None  # [B] scale in [0, 2)
    contrast: np.ndarray | None = None  # [B] scale in [0.5, 1.5)
    shift: np.ndarray | None = None  # [B, 2] integer (dy, dx)
    cutout: np.ndarray | None = None  # [B, 2] top-left corner (y, x), may be negative
    cutout_size: tuple[int, int] = (0, 0)


def check_policies(policies: Iterable[str]) -> tuple[str, ...]:
    pol = tuple(p for p in policies if p)
    for p in pol:
        if p not in POLICIES:
            raise ConfigError(f"unknown DiffAug policy {p!r}; expected a subset of {POLICIES}")
    return pol


def sample_aug_params(policies, batch: int, size: tuple[int, int], rng: np.random.Generator) -> AugParams:
    pol = check_policies(policies)
    h, w = size
    kw = {}
    if "color" in pol:
        kw["brightness"] = rng.random(batch) - 0.5
        kw["saturation"] = rng.random(batch) * 2.0
        kw["contrast"] = rng.random(batch) + 0.5
    if "translation" in pol:
        sy, sx = math.ceil(h / 8), math.ceil(w / 8)
        kw["shift"] = np.stack([rng.integers(-sy, sy + 1, batch), rng.integers(-sx, sx + 1, batch)], axis=1)
    if "cutout" in pol:
        ch, cw = int(h * 0.5 + 0.5), int(w * 0.5 + 0.5)
        cy = rng.integers(0, h + (1 - ch % 2), batch) - ch // 2
        cx = rng.integers(0, w + (1 - cw % 2), batch) - cw // 2
        kw["cutout"] = np.stack([cy, cx], axis=1)
        kw["cutout_size"] = (ch, cw)
    return AugParams(policies=pol, **kw)


def _per_sample(v: np.ndarray, dtype) -> np.ndarray:
    return v.astype(dtype).reshape(-1, 1, 1, 1)


def brightness(x: Tensor, shift: np.ndarray) -> Tensor:
    b = _per_sample(shift, x.dtype)
    return T.make_op(x.data + b, (x,), lambda g: (g,), "diffaug.brightness")


def _mix_with_mean(x: Tensor, scale: np.ndarray, axes: tuple, op: str) -> Tensor:
    # y = s * x + (1 - s) * mean(x); the map is self-adjoint per sample
    s = _per_sample(scale, x.dtype)

    def fwd(a):
        return s * a + (1 - s) * a.mean(axis=axes, keepdims=True)

    return T.make_op(fwd(x.data), (x,), lambda g: (fwd(g),), op)


def saturation(x: Tensor, scale: np.ndarray) -> Tensor:
    return _mix_with_mean(x, scale, (1,), "diffaug.saturation")


def contrast(x: Tensor, scale: np.ndarray) -> Tensor:
    return _mix_with_mean(x, scale, (1, 2, 3), "diffaug.contrast")


def _shift(a: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    H, W = a.shape[-2:]
    for b, (dy, dx) in enumerate(shifts):
        dy, dx = int(dy), int(dx)
        ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
        xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
        out[b, :, yd, xd] = a[b, :, ys, xs]
    return out


def translation(x: Tensor, shifts: np.ndarray) -> Tensor:
    """Integer shift per sample with zero fill; the adjoint shifts back."""
    return T.make_op(_shift(x.data, shifts), (x,), lambda g: (_shift(g, -np.asarray(shifts)),), "diffaug.translation")


def cutout_mask(shape, corners: np.ndarray, size: tuple[int, int], dtype) -> np.ndarray:
    B, _, H, W = shape
    mask = np.ones((B, 1, H, W), dtype=dtype)
    ch, cw = size
    for b, (y, x) in enumerate(corners):
        y0, x0 = max(int(y), 0), max(int(x), 0)
        mask[b, :, y0:max(int(y) + ch, 0), x0:max(int(x) + cw, 0)] = 0
    return mask


def cutout(x: Tensor, corners: np.ndarray, size: tuple[int, int]) -> Tensor:
    m = np.broadcast_to(cutout_mask(x.shape, corners, size, x.dtype), x.shape)
    return T.make_op(x.data * m, (x,), lambda g: (g * m,), "diffaug.cutout")


def diffaug(x: Tensor, policies=(), rng: np.random.Generator | None = None, params: AugParams | None = None) -> Tensor:
    """Augment ``x`` with sampled (``rng``) or given (``params``) parameters."""
    pol = check_policies(policies) if params is None else params.policies
    if not pol:
        return x
    if x.ndim != 4:
        raise DimensionError(f"diffaug expects [B,C,H,W], got {x.shape}")
    if params is None:
        if rng is None:
            raise ConfigError("diffaug needs either rng or params")
        params = sample_aug_params(pol, x.shape[0], x.shape[2:], rng)
    elif params.brightness is not None and len(params.brightness) != x.shape[0]:
        raise DimensionError("augmentation parameters sampled for a different batch size")
    if "color" in pol:
        x = contrast(saturation(brightness(x, params.brightness), params.saturation), params.contrast)
    if "translation" in pol:
        x = translation(x, params.shift)
    if "cutout" in pol:
        x = cutout(x, params.cutout, params.cutout_size)
    return x
