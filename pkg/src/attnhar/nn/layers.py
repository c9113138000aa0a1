"""Layers built on the tensor ops: conv, batch norm, dense."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Base class; parameters and buffers are discovered from attributes.

    Attribute insertion order fixes the parameter order, which keeps
    checkpoints and optimizer updates deterministic.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")
        for key in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{key}", getattr(self, key)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def same_padding(p: int, q: int) -> tuple[int, int, int, int]:
    """Zero padding that keeps the spatial size for a PxQ kernel at stride 1."""
    top, left = (p - 1) // 2, (q - 1) // 2
    return top, p - 1 - top, left, q - 1 - left


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: tuple[int, int],
                 rng: np.random.Generator, padding: str | tuple[int, int, int, int] = "same"):
        p, q = kernel_size
        fan_in = in_channels * p * q
        self.weight = Parameter(kaiming_uniform(rng, (out_channels, in_channels, p, q), fan_in),
                                name="weight")
        self.bias = Parameter(np.zeros(out_channels), name="bias", decay=False)
        self.padding = same_padding(p, q) if padding == "same" else tuple(padding)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.padding)


class BatchNorm(Module):
    """Per-channel batch normalization over axis 1 of [N, C, ...] inputs."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels), name="gamma", decay=False)
        self.beta = Parameter(np.zeros(channels), name="beta", decay=False)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training:
            return T.batch_norm_infer(x, self.gamma, self.beta,
                                      self.running_mean, self.running_var, self.eps)
        if x.shape[0] < 2:
            raise ValueError("batch norm needs a batch of at least 2 in train mode")
        out, mu, var = T.batch_norm_train(x, self.gamma, self.beta, self.eps)
        if T.is_grad_enabled():
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mu
            self.running_var = m * self.running_var + (1.0 - m) * var
        return out


ACTIVATIONS = {
    "none": lambda t: t,
    "relu": T.relu,
    "tanh": T.tanh,
}


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 activation: str = "none"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = Parameter(kaiming_uniform(rng, (out_features, in_features), in_features),
                                name="weight")
        self.bias = Parameter(np.zeros(out_features), name="bias", decay=False)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ValueError(f"dense expects [N, {self.weight.shape[1]}], got {list(x.shape)}")
        return ACTIVATIONS[self.activation](T.linear(x, self.weight, self.bias))


def cross_entropy_l2(probs: Tensor, labels, params, lam: float) -> Tensor:
    """Mean negative log-likelihood of the true class plus ``lam * sum ||w||^2``.

    Only parameters flagged ``decay`` (conv/dense/attention weights) enter the
    penalty.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    loss = T.nll_of_probs(probs, labels)
    if lam > 0:
        penalty = None
        for p in params:
            if p.decay:
                sq = T.sum_squares(p)
                penalty = sq if penalty is None else penalty + sq
        if penalty is not None:
            loss = loss + lam * penalty
    return loss
