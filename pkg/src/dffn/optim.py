"""Adam with bias correction and the halving learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in {name}; step aborted")
        self.name = name


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, named_params) -> "AdamState":
        st = cls()
        for name, p in named_params:
            st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        return st


def adam_step(named_params, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update over ``(name, Param)`` pairs.

    Every gradient is checked before anything is modified, so a non-finite
    gradient leaves parameters, moments and the step counter untouched.
    """
    named_params = list(named_params)
    for name, p in named_params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    state.t += 1
    t = state.t
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in named_params:
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.data.dtype)


def lr_at_epoch(e: float, lr_init: float = 2e-4, half_period: float = 100, mode: str = "ramp") -> float:
    """Halves every ``half_period`` epochs.

    ``ramp`` interpolates linearly inside each period, so
    ``lr(k P) = lr_init / 2^k`` and ``lr((k + 1/2) P) = 0.75 lr_init / 2^k``.
    ``step`` holds the rate constant within each period.
    """
    if e < 0:
        raise ValueError(f"epoch must be >= 0, got {e}")
    k, frac = divmod(e / half_period, 1.0)
    start = lr_init / 2 ** k
    if mode == "step":
        return start
    if mode != "ramp":
        raise ValueError(f"unknown schedule mode {mode!r}")
    return start * (1 - 0.5 * frac)
