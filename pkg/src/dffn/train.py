"""Training loop, validation and the variant-comparison harness."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from dffn.checkpoint import load_checkpoint, save_checkpoint
from dffn.datagen import ImagePair, crop_and_augment
from dffn.losses import LossWeights, total_loss
from dffn.metrics import psnr, ssim
from dffn.network import DFFN, DffnConfig, full_forward, init_params, param_count
from dffn.optim import AdamState, NonFiniteGradient, adam_step, lr_at_epoch
from dffn.tensor import Tensor, no_grad, set_deterministic

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "epoch", "lr", "lA", "lP", "total", "pixel_a", "amp_a",
               "pixel_p", "fft_p", "phase_p", "batch_hash")


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_half_period: int = 100
    lr_mode: str = "ramp"
    epochs: int = 1
    iterations: int | None = None   # overrides epochs when set
    batch: int = 4
    crop: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_alpha: float = 0.05
    loss_beta: float = 0.05
    loss_gamma: float = 0.05
    flips: bool = True
    seed: int = 0
    val_interval: int = 0           # iterations; 0 validates only at the end
    deterministic: bool = True
    verify_checkpoints: bool = False

    def __post_init__(self):
        if not self.lr_init > 0:
            raise ValueError("lr_init must be > 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.crop % 8 or self.crop < 8:
            raise ValueError(f"crop {self.crop} must be a positive multiple of 8")
        if self.lr_mode not in ("ramp", "step"):
            raise ValueError(f"lr_mode must be 'ramp' or 'step', got {self.lr_mode!r}")
        if self.iterations is not None and self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.loss_alpha, self.loss_beta, self.loss_gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


def load_configs(path) -> tuple[DffnConfig, TrainConfig]:
    """JSON file with optional ``net`` and ``train`` sections."""
    d = json.loads(Path(path).read_text())
    extra = set(d) - {"net", "train"}
    if extra:
        raise ValueError(f"{path}: unknown sections {sorted(extra)}")
    return DffnConfig.from_dict(d.get("net", {})), TrainConfig.from_dict(d.get("train", {}))


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, last_checkpoint: Path | None):
        super().__init__(f"{msg}; last good checkpoint: {last_checkpoint or 'none'}")
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    model: DFFN
    adam: AdamState
    rows: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [r["total"] for r in self.rows]

    @property
    def batch_hashes(self) -> list[str]:
        return [r["batch_hash"] for r in self.rows]

    def data_digest(self) -> str:
        return hashlib.sha256("".join(self.batch_hashes).encode()).hexdigest()[:16]


@contextlib.contextmanager
def deterministic_mode(flag: bool):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    set_deterministic(flag)
    try:
        if flag:
            with threadpool_limits(limits=1):
                yield
        else:
            yield
    finally:
        set_deterministic(False)


def stack(images) -> Tensor:
    return Tensor(np.stack(images).astype(np.float32))


def batch_hash(low: np.ndarray, gt: np.ndarray) -> str:
    h = hashlib.sha256(np.ascontiguousarray(low).tobytes())
    h.update(np.ascontiguousarray(gt).tobytes())
    return h.hexdigest()[:16]


def _fit(img: np.ndarray, multiple: int) -> np.ndarray:
    """Centre crop to the largest extent the network accepts."""
    _, h, w = img.shape
    hh, ww = h - h % multiple, w - w % multiple
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[:, top:top + hh, left:left + ww]


def enhance(model: DFFN, images, batch: int = 4) -> list[np.ndarray]:
    """oP for each (3, H, W) image; extents must suit the network."""
    out = []
    with no_grad():
        for i in range(0, len(images), batch):
            fr = full_forward(stack(images[i:i + batch]), model)
            out += list(np.clip(fr.o_p.data, 0.0, 1.0))
    return out


def evaluate_pairs(model: DFFN, pairs: list[ImagePair], batch: int = 4) -> dict:
    """Mean PSNR/SSIM of oP and of the untouched input against ground truth."""
    m = model.cfg.multiple
    lows = [_fit(p.low, m) for p in pairs]
    gts = [_fit(p.gt, m) for p in pairs]
    preds = enhance(model, lows, batch)
    return {
        "psnr": float(np.mean([psnr(a, b) for a, b in zip(preds, gts)])),
        "ssim": float(np.mean([ssim(a, b) for a, b in zip(preds, gts)])),
        "psnr_low": float(np.mean([psnr(a, b) for a, b in zip(lows, gts)])),
    }


def _write_row(f, row: dict) -> None:
    vals = []
    for k in LOG_COLUMNS:
        v = row[k]
        vals.append(f"{v:.9g}" if isinstance(v, float) else str(v))
    f.write("\t".join(vals) + "\n")
    f.flush()


def train_loop(train_pairs: list[ImagePair], cfg: TrainConfig, net_cfg: DffnConfig,
               val_pairs: list[ImagePair] | None = None, out_dir=None) -> TrainResult:
    """Adam training over random augmented crops.

    With ``out_dir`` set, writes ``train_log.tsv`` (one line per iteration),
    ``val_log.tsv`` and ``last.ckpt`` at every epoch end. On a non-finite
    loss or gradient the loop stops before touching the parameters and
    raises :class:`TrainingAborted`; ``last.ckpt`` then still holds the
    previous epoch.
    """
    if not train_pairs:
        raise ValueError("no training pairs")
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = out / "last.ckpt" if out else None
    last_good: Path | None = None
    with deterministic_mode(cfg.deterministic), contextlib.ExitStack() as stack_:
        model = init_params(net_cfg)
        adam = AdamState.zeros_like(model.named_params())
        result = TrainResult(model, adam)
        logf = vlogf = None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            logf = stack_.enter_context(open(out / "train_log.tsv", "w"))
            logf.write("\t".join(LOG_COLUMNS) + "\n")
            vlogf = stack_.enter_context(open(out / "val_log.tsv", "w"))
            vlogf.write("iter\tpsnr\tssim\n")

        def validate(it: int):
            if not val_pairs:
                return
            scores = evaluate_pairs(model, val_pairs, cfg.batch)
            result.validation.append({"iter": it, **scores})
            if vlogf:
                vlogf.write(f"{it}\t{scores['psnr']:.6f}\t{scores['ssim']:.6f}\n")
                vlogf.flush()

        def checkpoint(epoch: int, it: int):
            nonlocal last_good
            if not ckpt_path:
                return
            save_checkpoint(ckpt_path, model, adam, cfg.to_dict(), epoch, it)
            if cfg.verify_checkpoints:
                verify_roundtrip(ckpt_path, model, adam)
            last_good = ckpt_path
            result.checkpoints.append(ckpt_path)

        n = len(train_pairs)
        per_epoch = math.ceil(n / cfg.batch)
        budget = cfg.iterations if cfg.iterations is not None else cfg.epochs * per_epoch
        data_rng = np.random.default_rng([cfg.seed, 0xDA7A])
        weights = cfg.weights
        it = epoch = 0
        while it < budget:
            order = data_rng.permutation(n)
            order = np.concatenate([order, order[:per_epoch * cfg.batch - n]])
            lr = lr_at_epoch(epoch, cfg.lr_init, cfg.lr_half_period, cfg.lr_mode)
            for b in range(per_epoch):
                if it >= budget:
                    break
                crops = [crop_and_augment(train_pairs[i], cfg.crop, data_rng, cfg.flips)
                         for i in order[b * cfg.batch:(b + 1) * cfg.batch]]
                low = np.stack([c.low for c in crops])
                gt = np.stack([c.gt for c in crops])
                i_low, i_gt = Tensor(low), Tensor(gt)

                model.zero_grad()
                fr = full_forward(i_low, model)
                rep = total_loss(fr, i_gt, i_low, weights)
                it += 1
                if not np.isfinite(rep.terms["total"]):
                    raise TrainingAborted(f"non-finite loss at iteration {it}", last_good)
                rep.total.backward()
                try:
                    adam_step(model.named_params(), adam, lr, cfg.beta1, cfg.beta2, cfg.eps)
                except NonFiniteGradient as exc:
                    raise TrainingAborted(f"iteration {it}: {exc}", last_good) from exc

                row = {"iter": it, "epoch": epoch, "lr": lr, "batch_hash": batch_hash(low, gt),
                       **{k: float(v) for k, v in rep.values().items()}}
                result.rows.append(row)
                if logf:
                    _write_row(logf, row)
                if cfg.val_interval and it % cfg.val_interval == 0:
                    validate(it)
            epoch += 1
            checkpoint(epoch, it)
        if not cfg.val_interval or it % cfg.val_interval:
            validate(it)
    result.seconds = time.perf_counter() - t0
    return result


def verify_roundtrip(path, model: DFFN, adam: AdamState | None = None) -> None:
    """Reload ``path`` and demand bitwise equality with the live state."""
    ck = load_checkpoint(path)
    for name, p in model.named_params():
        if not np.array_equal(ck.tensors["param/" + name], p.data):
            raise AssertionError(f"{path}: parameter {name} did not round-trip bitwise")
        if adam is not None:
            if not (np.array_equal(ck.tensors["adam_m/" + name], adam.m[name])
                    and np.array_equal(ck.tensors["adam_v/" + name], adam.v[name])):
                raise AssertionError(f"{path}: Adam moments of {name} did not round-trip bitwise")


ABLATION_COLUMNS = ("variant", "params", "first10_loss", "last10_loss", "val_psnr", "val_ssim",
                    "val_psnr_low", "data_digest", "seconds")


def ablate(variants: list[str], train_pairs: list[ImagePair], val_pairs: list[ImagePair],
           cfg: TrainConfig, net_cfg: DffnConfig, out=None) -> list[dict]:
    """Train each variant on the same data stream and budget; one row per variant.

    The data stream depends only on ``cfg.seed``, so every variant sees the
    same batches; ``data_digest`` (a hash of all batch hashes) makes that
    checkable.
    """
    rows = []
    for v in variants:
        vcfg = net_cfg.with_variant(v)
        res = train_loop(train_pairs, cfg, vcfg, val_pairs)
        val = res.validation[-1]
        losses = res.losses
        rows.append({
            "variant": v,
            "params": param_count(res.model),
            "first10_loss": float(np.mean(losses[:10])),
            "last10_loss": float(np.mean(losses[-10:])),
            "val_psnr": val["psnr"],
            "val_ssim": val["ssim"],
            "val_psnr_low": val["psnr_low"],
            "data_digest": res.data_digest(),
            "seconds": res.seconds,
        })
        log.info("%s: val PSNR %.3f dB (%.1fs)", v, val["psnr"], res.seconds)
    digests = {r["data_digest"] for r in rows}
    if len(digests) > 1:
        raise AssertionError(f"variants saw different data streams: {digests}")
    if out is not None:
        write_tsv(out, rows, ABLATION_COLUMNS)
    return rows


def write_tsv(path, rows: list[dict], columns) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in columns])
