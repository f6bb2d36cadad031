"""Parameter containers.

A :class:`Module` owns :class:`~dffn.tensor.Param` attributes and child
modules; ``named_params`` walks them in attribute-definition order, which is
also the order weights are drawn at initialization and written to
checkpoints.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from dffn import ops
from dffn.tensor import Param, Tensor


class Module:
    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{name}.{i}", item

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params()))

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()


class Conv(Module):
    """Square-kernel convolution layer with bias; 'same' padding unless strided."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1):
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.weight = Param(np.zeros((cout, cin, k, k)))
        self.bias = Param(np.zeros(cout))

    @property
    def fan_in(self) -> int:
        return self.cin * self.k * self.k

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.k // 2)

    def __repr__(self) -> str:
        return f"Conv({self.cin}->{self.cout}, k={self.k}, stride={self.stride})"


def convs(module: Module, prefix: str = "") -> Iterator[tuple[str, Conv]]:
    """Every Conv layer under ``module`` with its dotted path."""
    for key, val in vars(module).items():
        name = f"{prefix}{key}"
        if isinstance(val, Conv):
            yield name, val
        elif isinstance(val, Module):
            yield from convs(val, name + ".")
        elif isinstance(val, (list, tuple)):
            for i, item in enumerate(val):
                if isinstance(item, Conv):
                    yield f"{name}.{i}", item
                elif isinstance(item, Module):
                    yield from convs(item, f"{name}.{i}.")


INIT_GAIN = 1 / np.sqrt(2.0)


def init_bound(fan_in: int, gain: float = INIT_GAIN) -> float:
    return gain * np.sqrt(6.0 / fan_in)


def init_uniform(module: Module, seed: int, gain: float = INIT_GAIN) -> None:
    """Fan-in scaled uniform weights and zero biases.

    The bound is ``gain * sqrt(6 / fan_in)``. The default gain gives
    ``sqrt(3 / fan_in)``: with ``gain=1`` the summed dual-domain branches
    grow activations about 1.6x per layer and the per-pixel filters (which
    are quadratic in feature scale) overflow float32 before the first loss.
    """
    rng = np.random.default_rng(seed)
    for _, conv in convs(module):
        bound = init_bound(conv.fan_in, gain)
        conv.weight.assign(rng.uniform(-bound, bound, size=conv.weight.shape))
        conv.bias.assign(np.zeros(conv.cout))
