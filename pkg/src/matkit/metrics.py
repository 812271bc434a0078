"""Image and material comparison metrics.

SSIM follows the usual Gaussian-window formulation (11 taps, sigma 1.5,
K1 = 0.01, K2 = 0.03, unit dynamic range) with reflect padding so the map has
the input's size.  ``seam_ratio`` scores tileability by comparing wrap-around
differences with interior ones.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import MATERIAL_ATTRIBUTES, Image, MaterialSet, resample_bilinear, rotate_material_set

SEAM_EPS = 1e-6
SEAMY_THRESHOLD = 1.5


def _as_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM averaged over channels, same height/width as the inputs."""
    x_all, y_all = _as_array(a), _as_array(b)
    _check_same(x_all, y_all)
    g = gaussian_window(window, sigma)

    def blur(z: np.ndarray) -> np.ndarray:
        return correlate1d(correlate1d(z, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    maps = []
    for c in range(x_all.shape[2]):
        x, y = x_all[:, :, c], y_all[:, :, c]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a, b, mask=None) -> float:
    """Mean SSIM; with ``mask`` both inputs are zeroed outside it and only masked pixels are averaged."""
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    if mask is None:
        return float(np.clip(ssim_map(x, y).mean(), -1.0, 1.0))
    m = np.asarray(getattr(mask, "data", mask), dtype=bool)
    if not m.any():
        raise ValueError("empty mask")
    smap = ssim_map(x * m[:, :, None], y * m[:, :, None])
    return float(np.clip(smap[m].mean(), -1.0, 1.0))


def mae(a, b) -> float:
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    return float(np.mean(np.abs(x - y)))


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)``; identical inputs return ``inf``."""
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    mse = float(np.mean((x - y) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def seam_ratio(image) -> float:
    """Mean |wrap-around difference| over mean |interior difference|, epsilon guarded.

    Boundary pairs are (last column, first column) per row and (last row,
    first row) per column; interior pairs are all horizontally and
    vertically adjacent pixels.  Values near 1 mean the tile edge looks like
    any other place in the image.
    """
    x = _as_array(image)
    h, w = x.shape[:2]
    if h < 4 or w < 4:
        raise ValueError("seam_ratio needs at least 4 pixels per side")
    boundary = np.concatenate([np.abs(x[:, 0] - x[:, -1]).ravel(), np.abs(x[0, :] - x[-1, :]).ravel()])
    interior = np.concatenate([np.abs(np.diff(x, axis=1)).ravel(), np.abs(np.diff(x, axis=0)).ravel()])
    return float((boundary.mean() + SEAM_EPS) / (interior.mean() + SEAM_EPS))


@dataclass
class AttributeScores:
    ssim: float
    mae: float
    psnr: float
    seam_ratio: float | None = None
    quarter_turns: int = 0


@dataclass
class EvalReport:
    scores: dict[str, AttributeScores] = field(default_factory=dict)
    mode: str = "fixed"
    note: str = "LPIPS/CLIP need pretrained networks and are not computed; SSIM, MAE, PSNR and seam ratio only"

    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.scores.values()]))

    def rows(self, sample: str) -> list[list]:
        out = []
        for attr, s in self.scores.items():
            seam = "" if s.seam_ratio is None else repr(s.seam_ratio)
            out.append([sample, attr, repr(s.ssim), repr(s.mae), repr(s.psnr), seam])
        return out


REPORT_HEADER = ("sample", "attribute", "ssim", "mae", "psnr", "seam_ratio")


def _score(pred: Image, gt: Image, with_seam: bool, k: int) -> AttributeScores:
    return AttributeScores(
        ssim=ssim(pred, gt),
        mae=mae(pred, gt),
        psnr=psnr(pred, gt),
        seam_ratio=seam_ratio(pred) if with_seam else None,
        quarter_turns=k,
    )


def evaluate_pair(
    pred: MaterialSet,
    gt: MaterialSet,
    rotations: Literal["search", "fixed"] = "search",
    with_seam: bool = True,
) -> EvalReport:
    """Per-attribute scores of ``pred`` against ``gt``.

    ``search`` tries the four quarter turns of ``pred`` and keeps, per
    attribute, the one with the best SSIM.
    """
    if rotations not in ("search", "fixed"):
        raise ValueError(f"unknown rotation mode {rotations!r}")
    if pred.resolution != gt.resolution:
        n = gt.resolution
        pred = MaterialSet.from_maps({k: resample_bilinear(v, n, n) for k, v in pred.maps().items()})
    if pred.resolution != gt.resolution:
        raise ValueError("resolution mismatch after resampling")
    turns = range(4) if rotations == "search" else range(1)
    gt_maps = gt.maps()
    report = EvalReport(mode=rotations)
    for k in turns:
        rotated = rotate_material_set(pred, k * math.pi / 2, "nearest").maps()
        for attr in MATERIAL_ATTRIBUTES:
            cand = _score(rotated[attr], gt_maps[attr], with_seam, k)
            best = report.scores.get(attr)
            if best is None or cand.ssim > best.ssim:
                report.scores[attr] = cand
    return report


def reports_to_csv(reports: dict[str, EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for sample, rep in reports.items():
        writer.writerows(rep.rows(sample))
    return buf.getvalue()
