"""Two-stage training objective with spatial and Fourier-domain L1 terms.

All L1 norms are element-count means. The stage-1 target keeps the
ground-truth amplitude and the low-light phase; stage 2 is supervised by the
ground truth directly, in pixels, in the complex spectrum (real and imaginary
parts separately) and in raw principal-value phase differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from dffn import ops
from dffn.fourier import amplitude, dft2, idft2, phase, recompose
from dffn.tensor import ShapeError, Tensor, no_grad


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 0.05

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be >= 0")


@dataclass
class LossReport:
    total: Tensor
    l_a: Tensor | None
    l_p: Tensor
    terms: dict[str, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        """Stage losses and sub-terms as plain floats (for logs)."""
        return {"lA": self.terms["lA"], "lP": self.terms["lP"], "total": self.terms["total"],
                **{k: v for k, v in self.terms.items() if k not in ("lA", "lP", "total")}}


def _same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def amplitude_stage_target(i_gt: Tensor, i_low: Tensor) -> Tensor:
    with no_grad():
        return idft2(recompose(amplitude(dft2(i_gt)), phase(dft2(i_low))))


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return ops.mean(ops.abs(ops.sub(a, b)))


def loss_amplitude_stage(o_a: Tensor, i_gt: Tensor, i_low: Tensor, w: LossWeights = LossWeights()):
    """Returns (loss tensor, {"pixel_a", "amp_a"})."""
    _same(o_a, i_gt, "loss_amplitude_stage")
    _same(o_a, i_low, "loss_amplitude_stage")
    target = amplitude_stage_target(i_gt, i_low)
    pixel = _l1(o_a, target)
    with no_grad():
        amp_gt = amplitude(dft2(i_gt))
    amp = _l1(amplitude(dft2(o_a)), amp_gt)
    loss = ops.add(pixel, ops.scale(amp, w.alpha))
    return loss, {"pixel_a": pixel.item(), "amp_a": amp.item()}


def loss_phase_stage(o_p: Tensor, i_gt: Tensor, w: LossWeights = LossWeights()):
    """Returns (loss tensor, {"pixel_p", "fft_p", "phase_p"})."""
    _same(o_p, i_gt, "loss_phase_stage")
    pixel = _l1(o_p, i_gt)
    s = dft2(o_p)
    with no_grad():
        s_gt = dft2(i_gt)
        ph_gt = phase(s_gt)
    fft = ops.add(_l1(s.re, s_gt.re), _l1(s.im, s_gt.im))
    ph = _l1(phase(s), ph_gt)
    loss = ops.add(ops.add(pixel, ops.scale(fft, w.beta)), ops.scale(ph, w.gamma))
    return loss, {"pixel_p": pixel.item(), "fft_p": fft.item(), "phase_p": ph.item()}


def total_loss(fr, i_gt: Tensor, i_low: Tensor, w: LossWeights = LossWeights()) -> LossReport:
    """L = L_A + L_P. Single-stage variants are trained on L_P alone."""
    l_p, terms = loss_phase_stage(fr.o_p, i_gt, w)
    if fr.single_stage:
        terms.update(pixel_a=0.0, amp_a=0.0)
        l_a, total = None, l_p
        la_val = 0.0
    else:
        l_a, terms_a = loss_amplitude_stage(fr.o_a, i_gt, i_low, w)
        terms.update(terms_a)
        total = ops.add(l_a, l_p)
        la_val = terms_a["pixel_a"] + w.alpha * terms_a["amp_a"]
    lp_val = terms["pixel_p"] + w.beta * terms["fft_p"] + w.gamma * terms["phase_p"]
    terms.update(lA=la_val, lP=lp_val, total=la_val + lp_val)
    return LossReport(total=total, l_a=l_a, l_p=l_p, terms=terms)
