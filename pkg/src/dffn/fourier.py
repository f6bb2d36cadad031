"""Unitary 2D DFT and amplitude/phase algebra, differentiable.

The forward transform is

    F(i, j) = 1/sqrt(HW) * sum_{h,w} x(h, w) * exp(-2*pi*j*(h*i/H + w*j/W))

applied per batch element and channel. The same 1/sqrt(HW) factor is used on
the way back, so the transform is energy preserving and its adjoint is its
inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dffn.tensor import ShapeError, Tensor, record

EPS = 1e-8


@dataclass
class Spectrum:
    """Real and imaginary planes of a per-channel 2D spectrum."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"Spectrum: re {self.re.shape} and im {self.im.shape} differ")

    @property
    def shape(self):
        return self.re.shape

    def complex(self) -> np.ndarray:
        return self.re.data.astype(np.complex128) + 1j * self.im.data


def _self_conjugate(n: int) -> list[int]:
    return [0, n // 2] if n % 2 == 0 and n > 1 else [0]


def dft2(x: Tensor) -> Spectrum:
    if x.data.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ShapeError(f"dft2: need at least a 1x1 plane, got shape {x.shape}")
    f = np.fft.fft2(x.data, norm="ortho")
    re = np.ascontiguousarray(f.real, dtype=x.dtype)
    im = np.ascontiguousarray(f.imag, dtype=x.dtype)
    # bins that map onto themselves under conjugation are real for real input
    rows, cols = _self_conjugate(x.shape[-2]), _self_conjugate(x.shape[-1])
    im[(Ellipsis,) + np.ix_(rows, cols)] = 0

    def backward(g):
        gx = np.fft.ifft2(g[0] + 1j * g[1], norm="ortho").real
        return (gx.astype(x.dtype, copy=False),)

    re_t, im_t = record("dft2", (x,), [re, im], backward)
    return Spectrum(re_t, im_t)


def idft2_with_residue(s: Spectrum) -> tuple[Tensor, float]:
    """Inverse transform plus the largest discarded imaginary magnitude."""
    z = np.fft.ifft2(s.re.data + 1j * s.im.data, norm="ortho")
    dtype = s.re.dtype
    out = np.ascontiguousarray(z.real, dtype=dtype)
    residue = float(np.abs(z.imag).max()) if z.size else 0.0

    def backward(g):
        f = np.fft.fft2(g[0], norm="ortho")
        return f.real.astype(dtype), f.imag.astype(dtype)

    return record("idft2", (s.re, s.im), [out], backward)[0], residue


def idft2(s: Spectrum) -> Tensor:
    """Real part of the unitary inverse transform."""
    return idft2_with_residue(s)[0]


def amplitude(s: Spectrum) -> Tensor:
    re, im = s.re.data, s.im.data
    r = np.sqrt(re * re + im * im)

    def backward(g):
        d = g[0] / np.maximum(r, EPS)
        return d * re, d * im

    return record("amplitude", (s.re, s.im), [r], backward)[0]


def phase(s: Spectrum) -> Tensor:
    """Quadrant-correct angle in (-pi, pi]."""
    re, im = s.re.data, s.im.data
    pi = re.dtype.type(np.pi)
    p = np.arctan2(im, re)
    # arctan2(-0.0, x<0) gives -pi; fold onto +pi
    p = np.where(p <= -pi, pi, p)

    def backward(g):
        d = g[0] / np.maximum(re * re + im * im, EPS)
        return -d * im, d * re

    return record("phase", (s.re, s.im), [p], backward)[0]


def recompose(a: Tensor, p: Tensor) -> Spectrum:
    if a.shape != p.shape:
        raise ShapeError(f"recompose: amplitude {a.shape} and phase {p.shape} differ")
    c, s = np.cos(p.data), np.sin(p.data)
    re = a.data * c
    im = a.data * s

    def backward(g):
        gre, gim = g
        ga = gre * c + gim * s if a.requires_grad else None
        gp = (gim * c - gre * s) * a.data if p.requires_grad else None
        return ga, gp

    re_t, im_t = record("recompose", (a, p), [re, im], backward)
    return Spectrum(re_t, im_t)


def swap_components(img_a: Tensor, img_b: Tensor) -> tuple[Tensor, Tensor]:
    """Exchange Fourier amplitude and phase between two images.

    Returns (amplitude of A with phase of B, amplitude of B with phase of A).
    """
    if img_a.shape != img_b.shape:
        raise ShapeError(f"swap_components: shapes {img_a.shape} and {img_b.shape} differ")
    sa, sb = dft2(img_a), dft2(img_b)
    amp_a, amp_b = amplitude(sa), amplitude(sb)
    ph_a, ph_b = phase(sa), phase(sb)
    return idft2(recompose(amp_a, ph_b)), idft2(recompose(amp_b, ph_a))


def dc_amplitude(x: np.ndarray) -> np.ndarray:
    """Magnitude of the zero-frequency coefficient per plane (sqrt(HW) * mean)."""
    h, w = x.shape[-2:]
    return np.abs(x.sum(axis=(-2, -1), dtype=np.float64)) / np.sqrt(h * w)
