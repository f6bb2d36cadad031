"""Paired low-light data: curve darkening, darkness-coupled noise, crops.

Darkening iterates the quadratic light-enhancement curve
``x <- x + alpha * x * (1 - x)`` with a negative strength, which pulls every
interior value towards 0 while keeping 0 and 1 fixed. The noise standard
deviation grows linearly with how dark the sampled curve is.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dffn.imageio import list_images, read_image, write_image


@dataclass(frozen=True)
class SynthesisParams:
    alpha_min: float = -0.4   # strongest darkening
    alpha_max: float = -0.1   # weakest darkening
    n_iters: int = 8
    sigma_base: float = 0.01
    sigma_slope: float = 0.09
    seed: int = 0

    def __post_init__(self):
        if not (-1 <= self.alpha_min <= self.alpha_max < 0):
            raise ValueError(f"alpha range [{self.alpha_min}, {self.alpha_max}] must lie in [-1, 0)")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.sigma_base < 0 or self.sigma_slope < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class ImagePair:
    low: np.ndarray
    gt: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.low.shape != self.gt.shape:
            raise ValueError(f"low {self.low.shape} and gt {self.gt.shape} differ")


def darken(gt: np.ndarray, alpha: float, n: int = 8) -> np.ndarray:
    if not -1.0 <= alpha <= 0.0:
        raise ValueError(f"alpha must lie in [-1, 0], got {alpha}")
    x = np.asarray(gt, dtype=np.float32)
    a = np.float32(alpha)
    for _ in range(n):
        x = x + a * x * (1 - x)
    return x


def noise_sigma(alpha: float, p: SynthesisParams) -> float:
    """sigma_base at the weakest curve, sigma_base + sigma_slope at the strongest."""
    weak, strong = abs(p.alpha_max), abs(p.alpha_min)
    d = 0.0 if strong == weak else (abs(alpha) - weak) / (strong - weak)
    d = min(max(d, 0.0), 1.0)
    return p.sigma_base + p.sigma_slope * d


def add_noise(img: np.ndarray, alpha: float, p: SynthesisParams, rng: np.random.Generator) -> np.ndarray:
    sigma = noise_sigma(alpha, p)
    noisy = img + rng.normal(0.0, sigma, size=img.shape).astype(np.float32)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def pair_rng(seed: int, source_id: str) -> np.random.Generator:
    """Per-pair generator; independent of the order pairs are produced in."""
    digest = hashlib.sha256(f"{seed}:{source_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def synthesize_pair(gt: np.ndarray, p: SynthesisParams, rng: np.random.Generator | None = None,
                    source_id: str = "") -> ImagePair:
    if rng is None:
        rng = pair_rng(p.seed, source_id)
    gt = np.clip(np.asarray(gt, dtype=np.float32), 0.0, 1.0)
    alpha = float(rng.uniform(p.alpha_min, p.alpha_max))
    low = add_noise(darken(gt, alpha, p.n_iters), alpha, p, rng)
    return ImagePair(low, gt, {"alpha": alpha, "sigma": noise_sigma(alpha, p), "source": source_id})


def crop_and_augment(pair: ImagePair, crop: int, rng: np.random.Generator, flips: bool = True) -> ImagePair:
    """Same random window and flips for both images."""
    _, h, w = pair.gt.shape
    if crop % 8:
        raise ValueError(f"crop size {crop} must be divisible by 8")
    if crop > min(h, w):
        raise ValueError(f"crop size {crop} exceeds image extent {h}x{w}")
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    hflip = vflip = False
    if flips:
        hflip, vflip = bool(rng.random() < 0.5), bool(rng.random() < 0.5)

    def apply(img):
        out = img[:, top:top + crop, left:left + crop]
        if hflip:
            out = out[:, :, ::-1]
        if vflip:
            out = out[:, ::-1, :]
        return np.ascontiguousarray(out)

    meta = dict(pair.meta, top=top, left=left, hflip=hflip, vflip=vflip)
    return ImagePair(apply(pair.low), apply(pair.gt), meta)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[..., ::-1])


# ------------------------------------------------------------------ scenes


def _smooth_noise(rng: np.random.Generator, shape, cutoff: float) -> np.ndarray:
    noise = rng.standard_normal(shape)
    fy = np.fft.fftfreq(shape[-2])[:, None]
    fx = np.fft.fftfreq(shape[-1])[None, :]
    lowpass = np.exp(-(fy ** 2 + fx ** 2) / (2 * cutoff ** 2))
    out = np.fft.ifft2(np.fft.fft2(noise) * lowpass).real
    return out / (out.std() + 1e-12)


def procedural_scene(size: int, rng: np.random.Generator, width: int | None = None) -> np.ndarray:
    """Aerial-looking test scene: parcels, texture, roads and roofs, in [0, 1]."""
    h, w = size, width or size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    k = int(rng.integers(5, 12))
    seeds = rng.uniform(0, 1, (k, 2)) * (h, w)
    colours = rng.uniform(0.15, 0.85, (k, 3))
    dist = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    img = colours[np.argmin(dist, axis=-1)].transpose(2, 0, 1)
    img = img + 0.06 * _smooth_noise(rng, (3, h, w), 0.08) + 0.04 * _smooth_noise(rng, (1, h, w), 0.3)

    for _ in range(int(rng.integers(1, 4))):
        angle = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.3, 0.3) * min(h, w)
        d = (xx - w / 2) * np.sin(angle) - (yy - h / 2) * np.cos(angle) - offset
        road = np.abs(d) < rng.uniform(0.8, 2.2)
        img[:, road] = rng.uniform(0.55, 0.75)

    for _ in range(int(rng.integers(2, 7))):
        bh, bw = rng.integers(2, max(3, h // 8), size=2)
        y0, x0 = int(rng.integers(0, h - bh)), int(rng.integers(0, w - bw))
        img[:, y0:y0 + bh, x0:x0 + bw] = rng.uniform(0.3, 0.95, (3, 1, 1))

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def toy_corpus(n: int, size: int, seed: int, p: SynthesisParams | None = None) -> list[ImagePair]:
    """n synthetic pairs from procedural scenes; pure function of the arguments."""
    p = p or SynthesisParams(seed=seed)
    pairs = []
    for i in range(n):
        name = f"scene{i:04d}"
        gt = procedural_scene(size, pair_rng(seed, "scene:" + name))
        pairs.append(synthesize_pair(gt, p, source_id=name))
    return pairs


# ---------------------------------------------------------------- on disk


def synth_dir(input_dir, output_dir, p: SynthesisParams) -> list[dict]:
    """Write ``low/<name>.png``, ``gt/<name>.png`` and ``manifest.tsv``."""
    out = Path(output_dir)
    rows = []
    for path in list_images(input_dir):
        pair = synthesize_pair(read_image(path), p, source_id=path.stem)
        write_image(out / "low" / f"{path.stem}.png", pair.low)
        write_image(out / "gt" / f"{path.stem}.png", pair.gt)
        rows.append({"name": path.stem, "alpha": pair.meta["alpha"], "sigma": pair.meta["sigma"]})
    write_manifest(out / "manifest.tsv", rows)
    return rows


def write_manifest(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["name", "alpha", "sigma"])
        for r in rows:
            wr.writerow([r["name"], f"{r['alpha']:.6f}", f"{r['sigma']:.6f}"])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"name": r["name"], "alpha": float(r["alpha"]), "sigma": float(r["sigma"])}
                for r in csv.DictReader(f, delimiter="\t")]


def load_pairs(data_dir) -> list[ImagePair]:
    """Pairs from a directory laid out like ``synth_dir`` output."""
    root = Path(data_dir)
    manifest = root / "manifest.tsv"
    if manifest.exists():
        names = [r["name"] for r in read_manifest(manifest)]
    else:
        names = [p.stem for p in list_images(root / "gt")]
    if not names:
        raise ValueError(f"{root}: no image pairs found")
    pairs = []
    for name in names:
        pairs.append(ImagePair(read_image(root / "low" / f"{name}.png"),
                               read_image(root / "gt" / f"{name}.png"), {"source": name}))
    return pairs
