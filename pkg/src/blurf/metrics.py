"""Image metrics and the evaluation report."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give the 99 dB sentinel."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of the luma images."""
    a, b = to_gray(a), to_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} window")
    g = gaussian_window(size, sigma)
    h = size // 2

    def filt(x):
        y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return y[h:-h or None, h:-h or None]

    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    frames: list = field(default_factory=list)       # 1-based frame ids
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    rendered: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    label: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def add(self, frame: int, pred, ref, rendered: str = "", reference: str = "") -> None:
        self.frames.append(int(frame))
        self.psnr.append(psnr(pred, ref))
        self.ssim.append(ssim(pred, ref))
        self.rendered.append(rendered)
        self.reference.append(reference)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_psnr"], d["mean_ssim"] = self.mean_psnr, self.mean_ssim
        return d

    def write(self, out: str, stem: str = "eval") -> tuple:
        """``<stem>.json`` and ``<stem>.csv``; both are byte-stable for equal inputs."""
        js = os.path.join(out, stem + ".json")
        cs = os.path.join(out, stem + ".csv")
        with open(js, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "psnr", "ssim", "rendered", "reference"])
            for row in zip(self.frames, self.psnr, self.ssim, self.rendered, self.reference):
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", row[3], row[4]])
            w.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}", "", ""])
        return js, cs
