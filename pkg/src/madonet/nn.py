"""Layers, initialisation, the L1 output penalty and Adam."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, absolute, add, conv1d, conv2d, matmul, relu, tanh, transpose, tsum

ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": lambda x: x}


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _check_activation(tag: str) -> None:
    if tag not in ACTIVATIONS:
        raise ValueError(f"unknown activation {tag!r}; expected one of {sorted(ACTIVATIONS)}")


@dataclass(frozen=True)
class DenseSpec:
    n_in: int
    n_out: int
    activation: str = "tanh"

    @property
    def fans(self) -> tuple[int, int]:
        return self.n_in, self.n_out


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: tuple[int, ...]  # (K,) for 1D, (KH, KW) for 2D
    stride: int = 1
    activation: str = "relu"

    @property
    def fans(self) -> tuple[int, int]:
        area = int(np.prod(self.kernel_size))
        return self.in_channels * area, self.out_channels * area


def init_params(spec: DenseSpec | ConvSpec, seed) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    fan_in, fan_out = spec.fans
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"layer extents must be positive: {spec}")
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if isinstance(spec, DenseSpec):
        return {
            "weight": rng.uniform(-limit, limit, size=(spec.n_out, spec.n_in)),
            "bias": np.zeros(spec.n_out),
        }
    shape = (spec.out_channels, spec.in_channels, *spec.kernel_size)
    return {"kernel": rng.uniform(-limit, limit, size=shape)}


class DenseLayer:
    """``act(x @ W.T + b)`` on a batch ``x`` of shape ``[B, in]``."""

    def __init__(self, spec: DenseSpec, seed, name: str = "dense"):
        _check_activation(spec.activation)
        self.spec = spec
        p = init_params(spec, seed)
        self.weight = Tensor(p["weight"], requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(p["bias"], requires_grad=True, name=f"{name}.bias")
        self.activation = spec.activation

    def params(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return ACTIVATIONS[self.activation](add(matmul(x, transpose(self.weight)), self.bias))


class ConvLayer:
    """Valid convolution (1D or 2D by kernel rank) followed by an activation."""

    def __init__(self, spec: ConvSpec, seed, name: str = "conv"):
        _check_activation(spec.activation)
        if spec.stride < 1:
            raise ValueError(f"stride must be >= 1, got {spec.stride}")
        if len(spec.kernel_size) not in (1, 2):
            raise ValueError("kernel_size must have one or two extents")
        self.spec = spec
        self.kernel = Tensor(init_params(spec, seed)["kernel"], requires_grad=True, name=f"{name}.kernel")
        self.stride = spec.stride
        self.activation = spec.activation

    def params(self) -> dict[str, Tensor]:
        return {self.kernel.name: self.kernel}

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        k = self.spec.kernel_size
        return (self.spec.out_channels, *((n - w) // self.stride + 1 for n, w in zip(in_shape[1:], k)))

    def __call__(self, x: Tensor) -> Tensor:
        conv = conv1d if len(self.spec.kernel_size) == 1 else conv2d
        return ACTIVATIONS[self.activation](conv(x, self.kernel, self.stride))


class DenseStack:
    """Fully connected net: tanh (or given) hidden layers and a linear output."""

    def __init__(
        self,
        n_in: int,
        widths: Sequence[int],
        n_out: int,
        seed,
        name: str,
        hidden_activation: str = "tanh",
        out_activation: str = "identity",
    ):
        sizes = [n_in, *widths, n_out]
        seeds = as_seed_sequence(seed).spawn(len(sizes) - 1)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if i == len(sizes) - 2 else hidden_activation
            self.layers.append(DenseLayer(DenseSpec(a, b, act), seeds[i], name=f"{name}.{i}"))
        self.n_in = n_in
        self.n_out = n_out

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def l1_penalty(vectors: Sequence[Tensor]) -> Tensor:
    """Sum of absolute values over every entry of every tensor."""
    if not vectors:
        return Tensor(0.0)
    total = tsum(absolute(vectors[0]))
    for v in vectors[1:]:
        total = add(total, tsum(absolute(v)))
    return total


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
