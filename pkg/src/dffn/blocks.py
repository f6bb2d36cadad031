"""Composite blocks: dual-domain amplitude/phase blocks, the cross-stage
attention bridge, and the two halves of the fusion/affine module."""
from __future__ import annotations

from typing import Sequence

from dffn import ops
from dffn.fourier import amplitude, dft2, idft2, phase, recompose
from dffn.layers import Conv, Module
from dffn.tensor import ShapeError, Tensor

BRANCHES = ("amplitude", "phase")
TOPOLOGIES = ("parallel", "spatial_first", "freq_first", "spatial_only", "residual")


class DualDomainBlock(Module):
    """Spatial conv branch plus a Fourier branch acting on one spectral component.

    ``branch="amplitude"`` gives DDAB: the amplitude plane goes through
    1x1 conv -> ReLU -> 1x1 conv while the phase is carried unchanged.
    ``branch="phase"`` gives DDPB: the roles are swapped.

    ``topology`` selects how the branches combine. ``parallel`` is the
    default ``spatial(x) + freq(x)``; ``spatial_first`` / ``freq_first``
    chain them as ``h + second(h)`` with ``h = first(x)``; ``spatial_only``
    drops the Fourier branch; ``residual`` is a plain ``x + spatial(x)``.
    """

    def __init__(self, c: int, branch: str = "amplitude", topology: str = "parallel"):
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
        if topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {topology!r}")
        self.c, self.branch, self.topology = c, branch, topology
        self.spatial = [Conv(c, c, 3), Conv(c, c, 3)]
        if topology not in ("spatial_only", "residual"):
            self.refine = Conv(c, c, 1)
            self.inner = Conv(c, c, 1)
            self.outer = Conv(c, c, 1)

    def spatial_branch(self, x: Tensor) -> Tensor:
        return ops.relu(self.spatial[1](ops.relu(self.spatial[0](x))))

    def freq_branch(self, x: Tensor) -> Tensor:
        s = dft2(self.refine(x))
        amp, ph = amplitude(s), phase(s)
        if self.branch == "amplitude":
            amp = self.outer(ops.relu(self.inner(amp)))
        else:
            ph = self.outer(ops.relu(self.inner(ph)))
        return idft2(recompose(amp, ph))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.c:
            raise ShapeError(f"block expects {self.c} channels, got input {x.shape}")
        t = self.topology
        if t == "parallel":
            return ops.add(self.spatial_branch(x), self.freq_branch(x))
        if t == "spatial_first":
            h = self.spatial_branch(x)
            return ops.add(h, self.freq_branch(h))
        if t == "freq_first":
            h = self.freq_branch(x)
            return ops.add(h, self.spatial_branch(h))
        if t == "spatial_only":
            return self.spatial_branch(x)
        return ops.add(x, self.spatial_branch(x))


def DDAB(c: int, topology: str = "parallel") -> DualDomainBlock:
    return DualDomainBlock(c, "amplitude", topology)


def DDPB(c: int, topology: str = "parallel") -> DualDomainBlock:
    return DualDomainBlock(c, "phase", topology)


def ddab_forward(fin: Tensor, p: DualDomainBlock) -> Tensor:
    return p(fin)


def ddpb_forward(fin: Tensor, p: DualDomainBlock) -> Tensor:
    return p(fin)


class CSAM(Module):
    """Supervised attention bridge closing the first stage.

    Produces the stage-1 image ``oA = img_conv(feat) + img_low`` and gates
    ``feat_conv(feat)`` with ``sigmoid(attn_conv(oA))`` before adding it back
    onto ``feat`` for the second stage.
    """

    def __init__(self, c: int):
        self.feat_conv = Conv(c, c, 3)
        self.img_conv = Conv(c, 3, 3)
        self.attn_conv = Conv(3, c, 3)

    def __call__(self, feat: Tensor, img_low: Tensor) -> tuple[Tensor, Tensor]:
        if feat.shape[2:] != img_low.shape[2:] or feat.shape[0] != img_low.shape[0]:
            raise ShapeError(f"CSAM: feature {feat.shape} and image {img_low.shape} disagree")
        x1 = self.feat_conv(feat)
        o_a = ops.add(self.img_conv(feat), img_low)
        mask = ops.sigmoid(self.attn_conv(o_a))
        bridged = ops.add(ops.mul(x1, mask), feat)
        return o_a, bridged


def csam_forward(feat: Tensor, img_low: Tensor, p: CSAM) -> tuple[Tensor, Tensor]:
    return p(feat, img_low)


class IFM(Module):
    """Cross-scale fusion of a feature pyramid (ordered fine to coarse).

    Every source gets a 3x3 conv. For each target scale, all sources are
    resampled to the target extents, mapped to the target channel count by a
    per-pair 1x1 adapter, concatenated, and fused by a 1x1 conv.
    """

    def __init__(self, channels: Sequence[int]):
        self.channels = tuple(channels)
        n = len(self.channels)
        self.pre = [Conv(c, c, 3) for c in self.channels]
        # adapters[t * n + s] maps source s onto target t
        self.adapters = [Conv(self.channels[s], self.channels[t], 1) for t in range(n) for s in range(n)]
        self.fuse = [Conv(n * c, c, 1) for c in self.channels]

    def __call__(self, sources: Sequence[Tensor]) -> list[Tensor]:
        n = len(self.channels)
        if len(sources) != n:
            raise ShapeError(f"IFM expects {n} sources, got {len(sources)}")
        for x, c in zip(sources, self.channels):
            if x.shape[1] != c:
                raise ShapeError(f"IFM source {x.shape} does not have {c} channels")
        feats = [conv(x) for conv, x in zip(self.pre, sources)]
        outs = []
        for t in range(n):
            th, tw = sources[t].shape[2:]
            parts = []
            for s in range(n):
                adapter = self.adapters[t * n + s]
                f = feats[s]
                # resampling rows sum to one, so it commutes with a 1x1 conv
                # (bias included); run the conv at the coarser extent
                if f.shape[2] * f.shape[3] > th * tw:
                    parts.append(adapter(ops.resample(f, th, tw)))
                else:
                    parts.append(ops.resample(adapter(f), th, tw))
            outs.append(self.fuse[t](ops.concat(parts, axis=1)))
        return outs


def ifm_forward(sources: Sequence[Tensor], p: IFM) -> list[Tensor]:
    return p(sources)


class IAM(Module):
    """Predicts a k x k filter per pixel and channel from three aligned
    features and applies it residually to the decoder feature ``u``."""

    def __init__(self, c: int, k: int = 3):
        if k < 1 or k % 2 == 0:
            raise ValueError(f"IAM kernel size must be odd and positive, got {k}")
        self.c, self.k = c, k
        self.fuse_conv = Conv(3 * c, c, 1)
        self.spatial_conv = Conv(c, c, 3)
        self.channel_conv = Conv(c, c, 1)
        self.filter_conv = Conv(c, k * k * c, 1)

    def __call__(self, a_bar: Tensor, p_bar: Tensor, u: Tensor) -> Tensor:
        if not (a_bar.shape == p_bar.shape == u.shape):
            raise ShapeError(f"IAM inputs disagree: {a_bar.shape}, {p_bar.shape}, {u.shape}")
        fused = self.fuse_conv(ops.concat([a_bar, p_bar, u], axis=1))
        context = ops.add(self.spatial_conv(fused), self.channel_conv(ops.global_avg_pool(fused)))
        kernels = self.filter_conv(context)
        return ops.add(ops.pixel_filter(u, kernels, self.k), u)


def iam_forward(a_bar: Tensor, p_bar: Tensor, u: Tensor, p: IAM) -> Tensor:
    return p(a_bar, p_bar, u)
