"""PSNR and single-scale SSIM, plus directory-level evaluation.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), K1=0.01,
K2=0.03, valid-mode convolution, per-channel maps averaged together.
Both metrics compute in float64 regardless of input dtype. Identical
images report the 100 dB PSNR sentinel instead of infinity so reports
stay finite and sortable.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .data import load_image
from .errors import IngestionError, InputError

PSNR_SENTINEL = 100.0
_WINDOW = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def psnr(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> float:
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = (a.double() - b.double()).pow(2).mean().item()
    if mse == 0:
        return PSNR_SENTINEL
    return 10.0 * math.log10(data_range * data_range / mse)


def _gaussian_window(dtype) -> torch.Tensor:
    coords = torch.arange(_WINDOW, dtype=dtype) - (_WINDOW - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * _SIGMA ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> float:
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() != 4:
        raise InputError(f"expected NxCxHxW, got {tuple(a.shape)}")
    N, C, H, W = a.shape
    if H < _WINDOW or W < _WINDOW:
        raise InputError(f"image {H}x{W} smaller than {_WINDOW}x{_WINDOW} window")
    x = a.double()
    y = b.double()
    win = _gaussian_window(torch.float64).expand(C, 1, _WINDOW, _WINDOW).contiguous()
    mu_x = F.conv2d(x, win, groups=C)
    mu_y = F.conv2d(y, win, groups=C)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = F.conv2d(x * x, win, groups=C) - mu_xx
    sigma_yy = F.conv2d(y * y, win, groups=C) - mu_yy
    sigma_xy = F.conv2d(x * y, win, groups=C) - mu_xy
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    ssim_map = ((2 * mu_xy + c1) * (2 * sigma_xy + c2)) / \
               ((mu_xx + mu_yy + c1) * (sigma_xx + sigma_yy + c2))
    return ssim_map.mean().item()


@dataclass
class MetricReport:
    per_image: list[dict] = field(default_factory=list)
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0

    def to_dict(self) -> dict:
        return {"per_image": self.per_image,
                "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim}


def evaluate_dirs(pred_dir: str, gt_dir: str, report_path: str | None = None) -> MetricReport:
    """Per-image PSNR/SSIM over matching filenames, plus means."""

    def listing(root):
        if not os.path.isdir(root):
            raise IngestionError(f"not a directory: {root}")
        return sorted(f for f in os.listdir(root)
                      if f.lower().endswith((".png", ".jpg", ".jpeg")))

    pred_files = listing(pred_dir)
    gt_files = listing(gt_dir)
    missing = sorted(set(pred_files) ^ set(gt_files))
    if missing:
        raise IngestionError(f"missing counterpart for: {', '.join(missing)}")
    if not pred_files:
        raise IngestionError("no images to evaluate")
    report = MetricReport()
    for fname in pred_files:
        pred = load_image(os.path.join(pred_dir, fname))
        gt = load_image(os.path.join(gt_dir, fname))
        if pred.shape != gt.shape:
            raise InputError(
                f"{fname}: prediction {tuple(pred.shape)} vs ground truth {tuple(gt.shape)}")
        report.per_image.append({
            "id": os.path.splitext(fname)[0],
            "psnr": psnr(pred, gt),
            "ssim": ssim(pred, gt),
        })
    report.mean_psnr = sum(r["psnr"] for r in report.per_image) / len(report.per_image)
    report.mean_ssim = sum(r["ssim"] for r in report.per_image) / len(report.per_image)
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report
