"""Minimal layer containers on top of adcore."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import adcore as ad
from .adcore import Array


class Module:
    """Holds parameters and sub-modules; parameter names are dotted paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Array]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Array) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Array]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
        for k, p in own.items():
            p.data[...] = state[k]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def param(data: np.ndarray) -> Array:
    return Array(np.asarray(data, dtype=ad.get_default_dtype()), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x W + b with W stored as [in, out]."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, zero: bool = False):
        w = np.zeros((n_in, n_out)) if zero else xavier_uniform(rng, n_in, n_out, (n_in, n_out))
        self.weight = param(w)
        self.bias = param(np.zeros(n_out))

    def __call__(self, x: Array) -> Array:
        return ad.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int = 1, padding: int | None = None):
        fan_in = c_in * k * k
        # He-uniform for ReLU stacks
        bound = np.sqrt(6.0 / fan_in)
        self.weight = param(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
        self.bias = param(np.zeros((c_out, 1, 1)))
        self._stride = stride
        self._padding = k // 2 if padding is None else padding

    def __call__(self, x: Array) -> Array:
        return ad.conv2d(x, self.weight, self._stride, self._padding) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x: Array) -> Array:
        return ad.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Linear -> ReLU -> Linear."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int, zero_last: bool = False):
        self.fc1 = Linear(rng, n_in, n_hidden)
        self.fc2 = Linear(rng, n_hidden, n_out, zero=zero_last)

    def __call__(self, x: Array) -> Array:
        return self.fc2(ad.relu(self.fc1(x)))
