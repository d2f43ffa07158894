"""Full-reference quality metrics over 8-bit images.

PSNR and MAD work on the 0..255 scale directly; SSIM is single-scale on
BT.601 luma with the standard 11x11 Gaussian window (sigma 1.5) and
stability constants C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over
window positions fully inside the image.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .imaging import ImageBuffer, load_image, scan_corpus

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2
_LUMA = (0.299, 0.587, 0.114)


def _as_pixels(image: Union[ImageBuffer, np.ndarray], name: str) -> np.ndarray:
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"{name}: expected HxWx3 pixels, got shape {data.shape}")
    return data.astype(np.float64)


def _check_pair(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = _as_pixels(a, name), _as_pixels(b, name)
    if pa.shape != pb.shape:
        raise ValueError(f"{name}: image dimensions differ, {pa.shape} vs {pb.shape}")
    return pa, pb


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical images give inf."""
    pa, pb = _check_pair(a, b, "psnr")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0**2 / mse)


def mad(a, b) -> float:
    """Mean absolute difference on the 0..255 scale."""
    pa, pb = _check_pair(a, b, "mad")
    return float(np.mean(np.abs(pa - pb)))


def _luma(pixels: np.ndarray) -> np.ndarray:
    return _LUMA[0] * pixels[:, :, 0] + _LUMA[1] * pixels[:, :, 1] + _LUMA[2] * pixels[:, :, 2]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian weights (sums to exactly 1 after division)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    one_d = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(one_d, one_d)
    return win / win.sum()


def _windowed_mean(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.einsum("ijuv,uv->ij", patches, win, optimize=False)


def ssim(a, b) -> float:
    """Single-scale structural similarity on luma; identical images give 1.0."""
    pa, pb = _check_pair(a, b, "ssim")
    h, w = pa.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    ya, yb = _luma(pa), _luma(pb)
    win = gaussian_window()
    mu_a = _windowed_mean(ya, win)
    mu_b = _windowed_mean(yb, win)
    var_a = _windowed_mean(ya * ya, win) - mu_a * mu_a
    var_b = _windowed_mean(yb * yb, win) - mu_b * mu_b
    cov = _windowed_mean(ya * yb, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a * mu_a + mu_b * mu_b + _C1) * (var_a + var_b + _C2)
    return float(np.mean(num / den))


@dataclass
class PairResult:
    name: str
    psnr_db: float
    ssim: float
    mad: float


@dataclass
class MetricReport:
    rows: list[PairResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_mad(self) -> float:
        return float(np.mean([r.mad for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("name,psnr_db,ssim,mad\n")
        for r in self.rows:
            out.write(f"{r.name},{_fmt(r.psnr_db)},{_fmt(r.ssim)},{_fmt(r.mad)}\n")
        return out.getvalue()

    def format_table(self) -> str:
        name_w = max([len(r.name) for r in self.rows] + [len("name"), len("mean")])
        lines = [f"{'name':<{name_w}}  {'psnr_db':>10}  {'ssim':>8}  {'mad':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.name:<{name_w}}  {_fmt(r.psnr_db):>10}  {_fmt(r.ssim):>8}  {_fmt(r.mad):>8}"
            )
        if self.rows:
            lines.append(
                f"{'mean':<{name_w}}  {_fmt(self.mean_psnr):>10}  "
                f"{_fmt(self.mean_ssim):>8}  {_fmt(self.mean_mad):>8}"
            )
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    if np.isinf(x):
        return "inf"
    if np.isnan(x):
        return "nan"
    return f"{x:.4f}"


def evaluate_pairs(
    enhanced_dir: Union[str, Path], reference_dir: Union[str, Path]
) -> MetricReport:
    """Score same-named files from two directories; unpaired names become warnings."""
    enhanced = {p.name: p for p in scan_corpus(enhanced_dir)}
    reference = {p.name: p for p in scan_corpus(reference_dir)}
    report = MetricReport()
    for name in sorted(set(enhanced) - set(reference)):
        report.warnings.append(f"{name}: no matching reference image")
    for name in sorted(set(reference) - set(enhanced)):
        report.warnings.append(f"{name}: no matching enhanced image")
    for name in sorted(set(enhanced) & set(reference)):
        img_e = load_image(enhanced[name])
        img_r = load_image(reference[name])
        report.rows.append(
            PairResult(
                name=name,
                psnr_db=psnr(img_e, img_r),
                ssim=ssim(img_e, img_r),
                mad=mad(img_e, img_r),
            )
        )
    return report
