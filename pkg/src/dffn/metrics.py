"""Full-reference image quality: PSNR and single-scale SSIM.

Both take plain arrays (or tensors) with values in [0, 1] and peak 1.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dffn.imageio import list_images, read_image

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _check(x: np.ndarray, y: np.ndarray, what: str) -> None:
    if x.shape != y.shape:
        raise ValueError(f"{what}: shapes {x.shape} and {y.shape} differ")


def psnr(x, y) -> float:
    """10 log10(1 / MSE); identical inputs give ``PSNR_CAP``."""
    x, y = _arr(x), _arr(y)
    _check(x, y, "psnr")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-r ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation over valid positions of the last two axes."""
    rows = sliding_window_view(img, len(g), axis=-2) @ g
    return sliding_window_view(rows, len(g), axis=-1) @ g


def ssim(x, y) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels.

    Inputs are (H, W), (C, H, W) or (N, C, H, W). The stabilizers are the
    usual ``(K1 L)^2`` and ``(K2 L)^2`` with L = 1.
    """
    x, y = _arr(x), _arr(y)
    _check(x, y, "ssim")
    if x.ndim < 2 or min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"ssim: image extent {x.shape[-2:]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1, c2 = K1 ** 2, K2 ** 2
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
    per_channel = smap.mean(axis=(-2, -1))
    return float(np.mean(per_channel))


@dataclass
class EvalReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    unmatched: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.names)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def warnings(self) -> int:
        return len(self.unmatched)

    def write_tsv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, delimiter="\t", lineterminator="\n")
            wr.writerow(["name", "psnr", "ssim"])
            for n, p, s in zip(self.names, self.psnr, self.ssim):
                wr.writerow([n, f"{p:.6f}", f"{s:.6f}"])
            wr.writerow(["MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def evaluate_dirs(pred_dir, gt_dir) -> EvalReport:
    """Score same-named images; names present on one side only are skipped."""
    pred = {p.name: p for p in list_images(pred_dir)}
    gt = {p.name: p for p in list_images(gt_dir)}
    report = EvalReport(unmatched=sorted(set(pred) ^ set(gt)))
    for name in report.unmatched:
        log.warning("unmatched image skipped: %s", name)
    common = sorted(set(pred) & set(gt))
    if not common:
        raise ValueError(f"no matched pairs between {pred_dir} and {gt_dir}")
    for name in common:
        x, y = read_image(pred[name]), read_image(gt[name])
        report.names.append(name)
        report.psnr.append(psnr(x, y))
        report.ssim.append(ssim(x, y))
    return report
