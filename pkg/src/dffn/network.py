"""Two-stage spatial/frequency enhancement network and its ablation variants.

Stage 1 (amplitude illumination) is a U-shaped encoder/decoder of DDAB
blocks with concat skips and a CSAM head producing ``oA``. The stage-2 input
``iMix`` keeps the amplitude of ``oA`` and the phase of the low-light input.
Stage 2 (phase refinement) is an encoder/decoder of DDPB blocks whose decoder
features are modulated by IFM + IAM using stage-1 decoder features and
stage-2 encoder features, and ends in a residual over ``iMix``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from dffn import ops
from dffn.blocks import CSAM, IAM, IFM, DualDomainBlock
from dffn.fourier import amplitude, dft2, idft2, phase, recompose
from dffn.layers import Conv, Module, convs, init_uniform
from dffn.tensor import ShapeError, Tensor

# variant -> (two stages, amplitude/phase swap, IFAM, block topology)
VARIANTS: dict[str, tuple[bool, bool, bool, str]] = {
    "full": (True, True, True, "parallel"),
    "m_a": (False, False, False, "spatial_only"),
    "m_b": (False, False, False, "parallel"),
    "m_c": (True, False, False, "parallel"),
    "m_d": (True, True, False, "parallel"),
    "serial_spatial_first": (True, True, False, "spatial_first"),
    "serial_freq_first": (True, True, False, "freq_first"),
    "no_ifam": (True, True, False, "parallel"),
    "no_dual_blocks": (True, True, True, "residual"),
}


@dataclass
class DffnConfig:
    """Architecture hyperparameters.

    ``blocks_per_level[l]`` is the number of blocks at pyramid level ``l``.
    On every level but the deepest they are split between encoder and
    decoder (encoder gets the extra one when odd); the deepest level is the
    bottleneck and holds all of its blocks.
    """

    base_channels: int = 20
    level_channels: tuple[int, ...] = (20, 40, 80, 160)
    blocks_per_level: tuple[int, ...] = (2, 2, 2, 1)
    ifam_kernel: int = 3
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        self.level_channels = tuple(int(c) for c in self.level_channels)
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        ch = self.level_channels
        if len(ch) < 2:
            raise ValueError("level_channels needs at least two levels")
        if ch[0] != self.base_channels:
            raise ValueError(f"level_channels[0]={ch[0]} must equal base_channels={self.base_channels}")
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ValueError(f"level_channels must be strictly increasing, got {ch}")
        if len(self.blocks_per_level) != len(ch):
            raise ValueError("blocks_per_level and level_channels must have the same length")
        if any(b < 0 for b in self.blocks_per_level):
            raise ValueError("blocks_per_level entries must be non-negative")
        if self.ifam_kernel < 1 or self.ifam_kernel % 2 == 0:
            raise ValueError(f"ifam_kernel must be odd and positive, got {self.ifam_kernel}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def levels(self) -> int:
        return len(self.level_channels)

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)

    @property
    def two_stage(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def swap(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def ifam(self) -> bool:
        return VARIANTS[self.variant][2]

    @property
    def topology(self) -> str:
        return VARIANTS[self.variant][3]

    def split(self, level: int) -> tuple[int, int]:
        b = self.blocks_per_level[level]
        return b - b // 2, b // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_channels"] = list(self.level_channels)
        d["blocks_per_level"] = list(self.blocks_per_level)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DffnConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if "level_channels" not in d and "base_channels" in d:
            c = int(d["base_channels"])
            d["level_channels"] = (c, 2 * c, 4 * c, 8 * c)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "DffnConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_variant(self, variant: str) -> "DffnConfig":
        d = self.to_dict()
        d["variant"] = variant
        return DffnConfig.from_dict(d)


class Stack(Module):
    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


class EncoderDecoder(Module):
    """Shared U-shaped trunk; decoder lists run coarse to fine."""

    def __init__(self, cfg: DffnConfig, branch: str, skip_merge: bool):
        ch, n = cfg.level_channels, cfg.levels
        block = lambda c: DualDomainBlock(c, branch, cfg.topology)  # noqa: E731
        self.head = Conv(3, ch[0], 3)
        self.enc = [Stack(block(ch[l]) for _ in range(cfg.split(l)[0])) for l in range(n - 1)]
        self.down = [Conv(ch[l], ch[l + 1], 3, stride=2) for l in range(n - 1)]
        self.bottleneck = Stack(block(ch[-1]) for _ in range(cfg.blocks_per_level[-1]))
        dec_levels = list(range(n - 2, -1, -1))
        self.up = [Conv(ch[l + 1], ch[l], 1) for l in dec_levels]
        if skip_merge:
            self.merge = [Conv(2 * ch[l], ch[l], 1) for l in dec_levels]
        self.dec = [Stack(block(ch[l]) for _ in range(cfg.split(l)[1])) for l in dec_levels]

    def upsample(self, i: int, x: Tensor, like: Tensor) -> Tensor:
        return self.up[i](ops.resample(x, like.shape[2], like.shape[3]))


class AmplitudeStage(Module):
    def __init__(self, cfg: DffnConfig):
        self.trunk = EncoderDecoder(cfg, "amplitude", skip_merge=True)
        if cfg.two_stage:
            self.csam = CSAM(cfg.base_channels)
        else:
            self.out_conv = Conv(cfg.base_channels, 3, 3)

    def __call__(self, i_low: Tensor):
        t = self.trunk
        x = t.head(i_low)
        skips = []
        for enc, down in zip(t.enc, t.down):
            x = enc(x)
            skips.append(x)
            x = down(x)
        x = t.bottleneck(x)
        a_feats = []
        for i, skip in enumerate(reversed(skips)):
            x = t.upsample(i, x, skip)
            a_feats.append(x)
            x = t.merge[i](ops.concat([x, skip], axis=1))
            x = t.dec[i](x)
        if hasattr(self, "csam"):
            o_a, bridged = self.csam(x, i_low)
        else:
            o_a, bridged = ops.add(self.out_conv(x), i_low), None
        return o_a, bridged, a_feats


class PhaseStage(Module):
    def __init__(self, cfg: DffnConfig):
        self.trunk = EncoderDecoder(cfg, "phase", skip_merge=False)
        self.tail = Conv(cfg.base_channels, 3, 3)
        if cfg.ifam:
            fine_to_coarse = list(cfg.level_channels[:-1])
            self.ifm_a = IFM(fine_to_coarse)
            self.ifm_p = IFM(fine_to_coarse)
            self.iam = [IAM(c, cfg.ifam_kernel) for c in reversed(fine_to_coarse)]

    def __call__(self, i_mix: Tensor, bridged: Tensor | None, a_feats):
        t = self.trunk
        x = t.head(i_mix)
        if bridged is not None:
            x = ops.add(x, bridged)
        p_feats = []
        for enc, down in zip(t.enc, t.down):
            x = enc(x)
            p_feats.append(x)
            x = down(x)
        x = t.bottleneck(x)

        ifam = hasattr(self, "iam")
        if ifam:
            a_fine = list(reversed(a_feats))
            for a, p in zip(a_fine, p_feats):
                if a.shape != p.shape:
                    raise ShapeError(f"stage-1 feature {a.shape} does not match stage-2 scale {p.shape}")
            a_bar = self.ifm_a(a_fine)[::-1]
            p_bar = self.ifm_p(p_feats)[::-1]

        u_feats = []
        for i, skip in enumerate(reversed(p_feats)):
            x = t.upsample(i, x, skip)
            u_feats.append(x)
            if ifam:
                x = self.iam[i](a_bar[i], p_bar[i], x)
            x = t.dec[i](x)
        o_p = ops.add(self.tail(x), i_mix)
        return o_p, p_feats, u_feats


class DFFN(Module):
    """All learnable layers for one configuration (the network's parameters)."""

    def __init__(self, cfg: DffnConfig):
        self.cfg = cfg
        self.stage1 = AmplitudeStage(cfg)
        if cfg.two_stage:
            self.stage2 = PhaseStage(cfg)

    def __call__(self, i_low: Tensor) -> "ForwardResult":
        return full_forward(i_low, self)


DffnParams = DFFN


@dataclass
class ForwardResult:
    o_a: Tensor
    i_mix: Tensor | None
    o_p: Tensor
    a_feats: list = field(default_factory=list)
    p_feats: list = field(default_factory=list)
    u_feats: list = field(default_factory=list)
    single_stage: bool = False


def init_params(cfg: DffnConfig) -> DFFN:
    model = DFFN(cfg)
    init_uniform(model, cfg.seed)
    return model


def _check_input(i_low: Tensor, cfg: DffnConfig) -> None:
    if i_low.data.ndim != 4 or i_low.shape[1] != 3:
        raise ShapeError(f"expected an N x 3 x H x W image batch, got {i_low.shape}")
    h, w = i_low.shape[2:]
    m = cfg.multiple
    if h % m or w % m:
        raise ShapeError(f"image extents {h}x{w} must be multiples of {m} for {cfg.levels} levels")


def stage1_forward(i_low: Tensor, model: DFFN, cfg: DffnConfig | None = None):
    cfg = cfg or model.cfg
    _check_input(i_low, cfg)
    return model.stage1(i_low)


def make_mix_input(o_a: Tensor, i_low: Tensor) -> Tensor:
    """Amplitude of ``o_a`` recombined with the phase of ``i_low``."""
    if o_a.shape != i_low.shape:
        raise ShapeError(f"make_mix_input: shapes {o_a.shape} and {i_low.shape} differ")
    return idft2(recompose(amplitude(dft2(o_a)), phase(dft2(i_low))))


def stage2_forward(i_mix: Tensor, bridged: Tensor | None, a_feats, model: DFFN, cfg: DffnConfig | None = None):
    cfg = cfg or model.cfg
    if not cfg.two_stage:
        raise ValueError(f"variant {cfg.variant} has no second stage")
    _check_input(i_mix, cfg)
    return model.stage2(i_mix, bridged, a_feats)


def full_forward(i_low: Tensor, model: DFFN, cfg: DffnConfig | None = None) -> ForwardResult:
    cfg = cfg or model.cfg
    o_a, bridged, a_feats = stage1_forward(i_low, model, cfg)
    if not cfg.two_stage:
        return ForwardResult(o_a, None, o_a, a_feats=a_feats, single_stage=True)
    i_mix = make_mix_input(o_a, i_low) if cfg.swap else o_a
    o_p, p_feats, u_feats = stage2_forward(i_mix, bridged, a_feats, model, cfg)
    return ForwardResult(o_a, i_mix, o_p, a_feats, p_feats, u_feats)


def param_count(model: Module) -> int:
    return model.param_count()


def param_breakdown(model: Module) -> list[tuple[str, str, int]]:
    """(layer path, description, scalar count) for every conv layer."""
    rows = []
    for name, conv in convs(model):
        rows.append((name, f"{conv.cin}->{conv.cout} k{conv.k}s{conv.stride}",
                     conv.weight.data.size + conv.bias.data.size))
    return rows


def param_table(model: Module) -> str:
    rows = param_breakdown(model)
    width = max(len(r[0]) for r in rows)
    lines = [f"{'layer':<{width}}  {'shape':<16} {'params':>9}"]
    lines += [f"{n:<{width}}  {d:<16} {c:>9,d}" for n, d, c in rows]
    total = sum(r[2] for r in rows)
    lines.append(f"{'total':<{width}}  {'':<16} {total:>9,d}  ({total / 1e6:.4f}M)")
    return "\n".join(lines)


def ifam_param_count(model: DFFN) -> int:
    if not model.cfg.two_stage or not model.cfg.ifam:
        return 0
    s2 = model.stage2
    return s2.ifm_a.param_count() + s2.ifm_p.param_count() + sum(m.param_count() for m in s2.iam)
