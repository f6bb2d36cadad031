"""Command-line entry point: ``python -m dffn <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dffn import datagen
from dffn.checkpoint import CheckpointError, load_checkpoint
from dffn.fourier import dc_amplitude, swap_components
from dffn.imageio import ImageFormatError, read_image, write_image
from dffn.network import DffnConfig, full_forward, init_params, param_table
from dffn.tensor import Tensor, no_grad
from dffn.train import TrainConfig, ablate, load_configs, train_loop

log = logging.getLogger("dffn")


def _synth_params(a) -> datagen.SynthesisParams:
    return datagen.SynthesisParams(a.alpha_min, a.alpha_max, a.n_iters, a.sigma_base, a.sigma_slope, a.seed)


def cmd_synth(a) -> int:
    p = _synth_params(a)
    if a.procedural:
        src = Path(a.output_dir) / "source"
        for i in range(a.procedural):
            name = f"scene{i:04d}"
            write_image(src / f"{name}.png",
                        datagen.procedural_scene(a.size, datagen.pair_rng(a.seed, "scene:" + name)))
        a.input_dir = src
    if a.input_dir is None:
        raise ValueError("synth needs --input-dir or --procedural N")
    rows = datagen.synth_dir(a.input_dir, a.output_dir, p)
    print(f"wrote {len(rows)} pairs to {a.output_dir}")
    return 0


def _configs(a) -> tuple[DffnConfig, TrainConfig]:
    net, tr = load_configs(a.config) if a.config else (DffnConfig(), TrainConfig())
    net_d, tr_d = net.to_dict(), tr.to_dict()
    for key, dest in (("iterations", "iterations"), ("epochs", "epochs"), ("batch", "batch"),
                      ("crop", "crop"), ("lr", "lr_init"), ("seed", "seed"), ("val_interval", "val_interval")):
        val = getattr(a, key, None)
        if val is not None:
            tr_d[dest] = val
    if getattr(a, "seed", None) is not None:
        net_d["seed"] = a.seed
    if getattr(a, "variant", None):
        net_d["variant"] = a.variant
    if getattr(a, "nondeterministic", False):
        tr_d["deterministic"] = False
    return DffnConfig.from_dict(net_d), TrainConfig.from_dict(tr_d)


def cmd_train(a) -> int:
    net, tr = _configs(a)
    pairs = datagen.load_pairs(a.data)
    if a.val_data:
        val = datagen.load_pairs(a.val_data)
    else:
        k = max(1, len(pairs) // 8) if len(pairs) > 1 else 0
        val = pairs[len(pairs) - k:] if k else pairs
        pairs = pairs[:len(pairs) - k] or pairs
    res = train_loop(pairs, tr, net, val, out_dir=a.out_dir)
    v = res.validation[-1] if res.validation else {}
    print(f"{len(res.rows)} iterations in {res.seconds:.1f}s; final loss {res.losses[-1]:.5f}; "
          f"val PSNR {v.get('psnr', float('nan')):.3f} dB SSIM {v.get('ssim', float('nan')):.4f}")
    return 0


def cmd_enhance(a) -> int:
    model = load_checkpoint(a.checkpoint).model()
    img = read_image(a.input)
    _, h, w = img.shape
    m = model.cfg.multiple
    ph, pw = -h % m, -w % m
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    with no_grad():
        out = full_forward(Tensor(padded[None]), model).o_p.data[0, :, :h, :w]
    write_image(a.output, out)
    print(f"wrote {a.output}")
    return 0


def cmd_eval(a) -> int:
    from dffn.metrics import evaluate_dirs
    rep = evaluate_dirs(a.pred_dir, a.gt_dir)
    rep.write_tsv(a.out)
    print(f"{rep.count} images: PSNR {rep.mean_psnr:.4f} dB, SSIM {rep.mean_ssim:.5f}; "
          f"{rep.warnings} unmatched")
    for name in rep.unmatched:
        print(f"warning: unmatched {name}", file=sys.stderr)
    return 0


def cmd_swap_demo(a) -> int:
    ia, ib = read_image(a.image_a), read_image(a.image_b)
    if ia.shape != ib.shape:
        raise ValueError(f"images differ in size: {ia.shape[1:]} vs {ib.shape[1:]}")
    with no_grad():
        amp_a_ph_b, amp_b_ph_a = swap_components(Tensor(ia), Tensor(ib))
    out = Path(a.out_dir)
    write_image(out / "amp_a_phase_b.png", amp_a_ph_b.data)
    write_image(out / "amp_b_phase_a.png", amp_b_ph_a.data)
    stats = {
        "mean_a": float(ia.mean()), "mean_b": float(ib.mean()),
        "mean_amp_a_phase_b": float(amp_a_ph_b.data.mean()),
        "mean_amp_b_phase_a": float(amp_b_ph_a.data.mean()),
        "dc_a": float(dc_amplitude(ia).mean()), "dc_b": float(dc_amplitude(ib).mean()),
        "dc_amp_a_phase_b": float(dc_amplitude(amp_a_ph_b.data).mean()),
        "dc_amp_b_phase_a": float(dc_amplitude(amp_b_ph_a.data).mean()),
    }
    print(" ".join(f"{k}={v:.6f}" for k, v in stats.items()))
    return 0


def cmd_gradcheck(a) -> int:
    from dffn.gradcheck import run_suite
    names = a.only.split(",") if a.only else None
    results = run_suite(names, seed=a.seed, report=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_params(a) -> int:
    cfg = load_configs(a.config)[0] if a.config else DffnConfig()
    if a.variant:
        cfg = cfg.with_variant(a.variant)
    print(param_table(init_params(cfg)))
    return 0


def cmd_ablate(a) -> int:
    net, tr = _configs(a)
    tr = TrainConfig.from_dict({**tr.to_dict(), "iterations": a.budget})
    if a.data:
        pairs = datagen.load_pairs(a.data)
        val = datagen.load_pairs(a.val_data) if a.val_data else pairs
    else:
        pairs = datagen.toy_corpus(a.train_pairs, a.size, seed=tr.seed)
        val = datagen.toy_corpus(a.val_pairs, a.size, seed=tr.seed + 10_000)
    rows = ablate(a.variants.split(","), pairs, val, tr, net, out=a.out)
    for r in rows:
        print(f"{r['variant']:<22} params={r['params']:>9,d} val_psnr={r['val_psnr']:.3f} "
              f"val_ssim={r['val_ssim']:.4f} loss {r['first10_loss']:.4f}->{r['last10_loss']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dffn", description="Dual-domain low-light enhancement toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize low/gt pairs")
    p.add_argument("--input-dir", type=Path)
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-min", type=float, default=-0.4)
    p.add_argument("--alpha-max", type=float, default=-0.1)
    p.add_argument("--n-iters", type=int, default=8)
    p.add_argument("--sigma-base", type=float, default=0.01)
    p.add_argument("--sigma-slope", type=float, default=0.09)
    p.add_argument("--procedural", type=int, default=0, metavar="N", help="generate N scenes as the source")
    p.add_argument("--size", type=int, default=64, help="procedural scene size")
    p.set_defaults(func=cmd_synth)

    def train_flags(p):
        p.add_argument("--config", type=Path, help="JSON file with 'net' and 'train' sections")
        p.add_argument("--seed", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--crop", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--nondeterministic", action="store_true")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--val-data", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--val-interval", type=int)
    p.add_argument("--variant")
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one image with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM of a prediction directory")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("swap-demo", help="exchange Fourier amplitude and phase of two images")
    p.add_argument("--image-a", type=Path, required=True)
    p.add_argument("--image-b", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_swap_demo)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--only", help="comma-separated check names")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="per-layer parameter counts")
    p.add_argument("--config", type=Path)
    p.add_argument("--variant")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("ablate", help="train variants under one budget and compare")
    p.add_argument("--variants", default="full,m_a,m_b,m_c,m_d")
    p.add_argument("--budget", type=int, required=True, help="iterations per variant")
    p.add_argument("--data", type=Path)
    p.add_argument("--val-data", type=Path)
    p.add_argument("--train-pairs", type=int, default=16)
    p.add_argument("--val-pairs", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", type=Path, default=Path("ablation.tsv"))
    train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, ImageFormatError, CheckpointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
