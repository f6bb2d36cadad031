"""Central finite-difference checks for every primitive and composite block.

Each case runs in float64 on a small seeded instance. A vector-valued output
is reduced to a scalar by a fixed random projection, the analytic gradient of
every input is compared against ``(f(x + h) - f(x - h)) / 2h`` on a seeded
subset of coordinates, and the error is reported relative to the largest
gradient magnitude of that input.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from dffn import ops
from dffn.blocks import CSAM, DDAB, DDPB, IAM, IFM, DualDomainBlock
from dffn.fourier import Spectrum, amplitude, dft2, idft2, phase, recompose, swap_components
from dffn.layers import Module, init_uniform
from dffn.losses import LossWeights, loss_amplitude_stage, loss_phase_stage
from dffn.network import DffnConfig, full_forward, init_params, make_mix_input
from dffn.tensor import Param, Tensor, no_grad, precision

TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    coords: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= TOLERANCE)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<28} rel_err={self.max_rel_err:.2e} coords={self.coords:4d} ({self.seconds:.2f}s)"


def _scalar(out, weights: list[np.ndarray]) -> Tensor:
    """sum_i <out_i, w_i> over every tensor output."""
    outs = out if isinstance(out, (list, tuple)) else [out]
    total = None
    for o, w in zip(outs, weights):
        term = ops.sum(ops.mul(o, Tensor(w)))
        total = term if total is None else ops.add(total, term)
    return total


def grad_check(fn: Callable, inputs: list[Tensor], eps: float = 1e-6, max_coords: int = 24,
               seed: int = 0) -> tuple[float, int]:
    """Largest relative error between analytic and numeric gradients.

    ``fn()`` must build its output from ``inputs``; it may return a tensor or
    a list of tensors. Returns (max relative error, coordinates checked).
    """
    rng = np.random.default_rng(seed)
    with no_grad():
        ref = fn()
    outs = ref if isinstance(ref, (list, tuple)) else [ref]
    weights = [rng.standard_normal(o.shape) for o in outs]

    for t in inputs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    _scalar(fn(), weights).backward()

    def value() -> float:
        with no_grad():
            return float(_scalar(fn(), weights).data)

    worst, count = 0.0, 0
    for t in inputs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        scale = max(np.abs(a).max(), np.abs(numeric).max(), 1e-8)
        worst = max(worst, float(np.abs(a - numeric).max() / scale))
        count += len(idx)
    return worst, count


def _parts(s) -> list[Tensor]:
    return [s.re, s.im]


def _module_inputs(m: Module) -> list[Param]:
    return m.params()


def _init(m: Module, seed: int) -> Module:
    init_uniform(m, seed)
    rng = np.random.default_rng(seed + 1)
    for _, p in m.named_params():
        if p.data.ndim == 1:   # non-zero biases so their gradients are exercised
            p.assign(rng.uniform(-0.1, 0.1, p.shape))
    return m


def _cases(rng: np.random.Generator) -> dict[str, Callable[[], tuple[Callable, list[Tensor]]]]:
    def t(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape))

    def away_from_zero(*shape):
        x = rng.uniform(0.2, 1.0, shape) * rng.choice([-1, 1], shape)
        return Tensor(x)

    def img(n=1, c=3, s=8):
        return Tensor(rng.uniform(0.05, 0.95, (n, c, s, s)))

    cases = {}

    def case(name):
        def deco(f):
            cases[name] = f
            return f
        return deco

    @case("conv2d")
    def _():
        x, w, b = t(2, 3, 8, 8), t(4, 3, 3, 3), t(4)
        return lambda: ops.conv2d(x, w, b, pad=1), [x, w, b]

    @case("conv2d_stride2")
    def _():
        x, w, b = t(1, 3, 8, 8), t(5, 3, 3, 3), t(5)
        return lambda: ops.conv2d(x, w, b, stride=2, pad=1), [x, w, b]

    @case("conv2d_1x1")
    def _():
        x, w, b = t(2, 4, 8, 8), t(3, 4, 1, 1), t(3)
        return lambda: ops.conv2d(x, w, b), [x, w, b]

    @case("relu")
    def _():
        x = away_from_zero(2, 3, 8, 8)
        return lambda: ops.relu(x), [x]

    @case("sigmoid")
    def _():
        x = t(2, 3, 8, 8, lo=-4, hi=4)
        return lambda: ops.sigmoid(x), [x]

    @case("add_sub_mul_broadcast")
    def _():
        a, b, c = t(2, 3, 8, 8), t(1, 3, 1, 1), t(2, 1, 8, 8)
        return lambda: ops.mul(ops.sub(ops.add(a, b), c), b), [a, b, c]

    @case("scale")
    def _():
        x = t(2, 3, 8, 8)
        return lambda: ops.scale(x, -2.5), [x]

    @case("abs")
    def _():
        x = away_from_zero(2, 3, 8, 8)
        return lambda: ops.abs(x), [x]

    @case("mean_sum")
    def _():
        x = t(2, 3, 8, 8)
        return lambda: ops.add(ops.mean(x), ops.scale(ops.sum(x), 0.1)), [x]

    @case("concat")
    def _():
        a, b = t(2, 3, 8, 8), t(2, 2, 8, 8)
        return lambda: ops.concat([a, b], axis=1), [a, b]

    @case("resample_up")
    def _():
        x = t(1, 2, 4, 4)
        return lambda: ops.resample(x, 8, 8), [x]

    @case("resample_down")
    def _():
        x = t(1, 2, 8, 8)
        return lambda: ops.resample(x, 4, 4), [x]

    @case("global_avg_pool")
    def _():
        x = t(2, 3, 8, 8)
        return lambda: ops.global_avg_pool(x), [x]

    @case("pixel_filter")
    def _():
        u, k = t(1, 2, 8, 8), t(1, 18, 8, 8)
        return lambda: ops.pixel_filter(u, k, 3), [u, k]

    @case("dft2")
    def _():
        x = t(2, 3, 8, 8)
        return lambda: _parts(dft2(x)), [x]

    @case("dft2_odd")
    def _():
        x = t(1, 2, 7, 5)
        return lambda: _parts(dft2(x)), [x]

    @case("idft2")
    def _():
        re, im = t(1, 3, 8, 8), t(1, 3, 8, 8)
        return lambda: idft2(Spectrum(re, im)), [re, im]

    @case("amplitude")
    def _():
        re, im = away_from_zero(1, 3, 8, 8), away_from_zero(1, 3, 8, 8)
        return lambda: amplitude(Spectrum(re, im)), [re, im]

    @case("phase")
    def _():
        # keep away from the branch cut on the negative real axis
        r = rng.uniform(0.3, 1.0, (1, 3, 8, 8))
        theta = rng.uniform(-0.9 * np.pi, 0.9 * np.pi, r.shape)
        re, im = Tensor(r * np.cos(theta)), Tensor(r * np.sin(theta))
        return lambda: phase(Spectrum(re, im)), [re, im]

    @case("recompose")
    def _():
        a, p = t(1, 3, 8, 8, lo=0.1, hi=1.0), t(1, 3, 8, 8, lo=-3, hi=3)
        return lambda: _parts(recompose(a, p)), [a, p]

    @case("amplitude_phase_swap")
    def _():
        a, b = img(), img()
        return lambda: list(swap_components(a, b)), [a, b]

    @case("mix_input")
    def _():
        o, low = img(), img()
        return lambda: make_mix_input(o, low), [o, low]

    @case("DDAB")
    def _():
        m = _init(DDAB(4), 1)
        x = t(1, 4, 8, 8)
        return lambda: m(x), [x] + _module_inputs(m)

    @case("DDPB")
    def _():
        m = _init(DDPB(4), 2)
        x = t(1, 4, 8, 8)
        return lambda: m(x), [x] + _module_inputs(m)

    @case("DDAB_serial")
    def _():
        m = _init(DualDomainBlock(4, "amplitude", "freq_first"), 3)
        x = t(1, 4, 8, 8)
        return lambda: m(x), [x] + _module_inputs(m)

    @case("CSAM")
    def _():
        m = _init(CSAM(4), 4)
        f, low = t(1, 4, 8, 8), img()
        return lambda: list(m(f, low)), [f, low] + _module_inputs(m)

    @case("IFM")
    def _():
        m = _init(IFM([2, 4, 6]), 5)
        xs = [t(1, 2, 8, 8), t(1, 4, 4, 4), t(1, 6, 2, 2)]
        return lambda: m(xs), xs + _module_inputs(m)

    @case("IAM")
    def _():
        m = _init(IAM(4, 3), 6)
        a, p, u = t(1, 4, 8, 8), t(1, 4, 8, 8), t(1, 4, 8, 8)
        return lambda: m(a, p, u), [a, p, u] + _module_inputs(m)

    @case("loss_amplitude_stage")
    def _():
        o, gt, low = img(2), img(2), img(2)
        w = LossWeights(0.3, 0.3, 0.3)
        return lambda: loss_amplitude_stage(o, gt, low, w)[0], [o]

    @case("loss_phase_stage")
    def _():
        o, gt = img(2), img(2)
        w = LossWeights(0.3, 0.3, 0.3)
        return lambda: loss_phase_stage(o, gt, w)[0], [o]

    @case("full_network")
    def _():
        cfg = DffnConfig(base_channels=4, level_channels=(4, 8), blocks_per_level=(2, 1), seed=7)
        model = _init(init_params(cfg), 7)
        x = img()

        def fn():
            fr = full_forward(x, model)
            return [fr.o_a, fr.o_p]
        return fn, [x] + model.params()

    return cases


def run_suite(names: list[str] | None = None, seed: int = 0, eps: float = 1e-6,
              report: Callable[[str], None] | None = None) -> list[CheckResult]:
    results = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        cases = _cases(rng)
        for name in names or list(cases):
            if name not in cases:
                raise KeyError(f"unknown gradient check {name!r}")
            t0 = time.perf_counter()
            fn, inputs = cases[name]()
            err, n = grad_check(fn, inputs, eps=eps, seed=seed)
            res = CheckResult(name, err, n, time.perf_counter() - t0)
            results.append(res)
            if report:
                report(res.line())
    return results


CASE_NAMES = tuple(_cases(np.random.default_rng(0)))
