"""Parameterized building blocks on top of :mod:`spepattern.tensor`."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor, get_default_dtype


class Module:
    """Container of named parameters; subclasses define ``__call__``."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(f"{prefix}{key}."))
            elif isinstance(val, (list, tuple)):
                for i, m in enumerate(val):
                    if isinstance(m, Module):
                        out.extend(m.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise KeyError(f"parameter names do not match: {missing}")
        for k, p in params.items():
            if p.shape != np.shape(state[k]):
                raise ValueError(f"{k}: shape {np.shape(state[k])} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)


def _param(rng: np.random.Generator, shape, std: float = 0.02, name=None) -> Tensor:
    data = rng.normal(0.0, std, size=shape) if std else np.zeros(shape)
    return Tensor(np.ascontiguousarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = _param(rng, (n_in, n_out))
        self.bias = _param(rng, (n_out,), std=0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.matmul(x, self.weight), self.bias)


class Conv3x3(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 1):
        self.stride = stride
        self.weight = _param(rng, (c_out, c_in, 3, 3))
        self.bias = _param(rng, (c_out,), std=0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class EfficientAttention(Module):
    """Linear-cost attention block with a residual connection.

    Queries are normalized by a softmax over the key depth at each position,
    keys by a softmax over positions for each depth channel, so the global
    context ``keys^T @ values`` is only ``d x d``.
    """

    def __init__(self, channels: int, rng: np.random.Generator, key_dim: int | None = None):
        d = key_dim or max(1, channels // 2)
        self.channels, self.key_dim = channels, d
        self.query = _param(rng, (channels, d))
        self.key = _param(rng, (channels, d))
        self.value = _param(rng, (channels, d))
        self.proj = _param(rng, (d, channels))
        self.proj_bias = _param(rng, (channels,), std=0)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        flat = T.transpose(T.reshape(x, (B, C, H * W)), (0, 2, 1))  # B, HW, C
        q = T.softmax(T.matmul(flat, self.query), axis=2)
        k = T.softmax(T.matmul(flat, self.key), axis=1)
        v = T.matmul(flat, self.value)
        context = T.matmul(T.transpose(k, (0, 2, 1)), v)  # B, d, d
        attended = T.matmul(q, context)  # B, HW, d
        out = T.matmul(attended, self.proj)  # B, HW, C
        out = T.reshape(T.transpose(out, (0, 2, 1)), (B, C, H, W))
        return x + T.add_bias(out, self.proj_bias)


def efficient_attention(x: Tensor, params: EfficientAttention) -> Tensor:
    return params(x)
