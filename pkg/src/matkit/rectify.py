"""Depth-guided coarse rectification.

Masked pixels are unprojected with a shifted normalized depth, their
orthographic camera-plane coordinates are rescaled into the target grid,
splatted (overlaps averaged) and remaining holes are filled with the mean of
their valid ``k x k`` neighbours in a single pass.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.ndimage import correlate

from .imaging import DepthMap, Image, Mask, _resize_array

NormalizeMode = Literal["per-axis", "aspect-preserving"]


class DegenerateExtentError(ValueError):
    """All masked pixels project onto a line, so one axis cannot be normalized."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def check_bounds(self, width: int, height: int) -> None:
        if not (0 <= self.cx <= width - 1 and 0 <= self.cy <= height - 1):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image")

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


def default_intrinsics(width: int, height: int) -> Intrinsics:
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    f = float(max(width, height))
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class RectifyParams:
    d_shift: float = 1.0
    target_w: int = 1024
    target_h: int = 1024
    s_sample: float = 0.5
    hole_kernel: int = 5
    normalize: NormalizeMode = "per-axis"

    def __post_init__(self) -> None:
        if not self.d_shift >= 0:
            raise ValueError("d_shift must be >= 0")
        if not 0 < self.s_sample <= 1:
            raise ValueError("s_sample must lie in (0, 1]")
        if self.hole_kernel < 3 or self.hole_kernel % 2 == 0:
            raise ValueError("hole_kernel must be an odd integer >= 3")
        if self.target_w < 2 or self.target_h < 2:
            raise ValueError("target resolution must be at least 2x2")
        if self.normalize not in ("per-axis", "aspect-preserving"):
            raise ValueError(f"unknown normalize mode {self.normalize!r}")

    @property
    def grid_w(self) -> int:
        return max(2, int(round(self.target_w * self.s_sample)))

    @property
    def grid_h(self) -> int:
        return max(2, int(round(self.target_h * self.s_sample)))

    @property
    def s_x(self) -> int:
        return self.grid_w - 1

    @property
    def s_y(self) -> int:
        return self.grid_h - 1


@dataclass(frozen=True, eq=False)
class RemapField:
    rows: np.ndarray
    cols: np.ndarray
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    grid_w: int
    grid_h: int

    def __len__(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True, eq=False)
class SplatCanvas:
    accum: np.ndarray
    count: np.ndarray

    @property
    def height(self) -> int:
        return self.count.shape[0]

    @property
    def width(self) -> int:
        return self.count.shape[1]

    def normalized(self) -> np.ndarray:
        out = np.zeros_like(self.accum)
        hit = self.count > 0
        out[hit] = self.accum[hit] / self.count[hit][:, None]
        return out

    def hole_fraction(self) -> float:
        return float(np.mean(self.count == 0))


def metric_d_shift(raw_min: float, raw_max: float) -> float:
    """Shift that makes ``normalized depth + d_shift`` proportional to metric depth.

    Only meaningful when the raw range of a min-max normalized depth map is
    known (e.g. from the synthetic renderer).
    """
    if raw_max <= raw_min:
        raise ValueError("raw depth range has zero width")
    return raw_min / (raw_max - raw_min)


def _normalize_axes(x: np.ndarray, y: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    x_min, x_max = x.min(), x.max()
    y_min, y_max = y.min(), y.max()
    ext_x, ext_y = x_max - x_min, y_max - y_min
    if ext_x <= 0 or ext_y <= 0:
        raise DegenerateExtentError("masked pixels have zero extent along an axis")
    if mode == "per-axis":
        return (x - x_min) / ext_x, (y - y_min) / ext_y
    big = max(ext_x, ext_y)
    return (x - x_min) / big + (1 - ext_x / big) / 2, (y - y_min) / big + (1 - ext_y / big) / 2


def unproject_remap(depth: DepthMap, mask: Mask, K: Intrinsics, params: RectifyParams) -> RemapField:
    if depth.data.shape != mask.data.shape:
        raise ValueError(f"depth {depth.data.shape} and mask {mask.data.shape} disagree")
    rows, cols = np.nonzero(mask.data)
    if rows.size == 0:
        raise ValueError("mask is empty")
    d = depth.data[rows, cols]
    if params.d_shift == 0 and d.min() <= 0:
        raise ValueError("d_shift = 0 with zero masked depth collapses the unprojection")
    scale = d + params.d_shift
    x = (cols - K.cx) * scale / K.fx
    y = (rows - K.cy) * scale / K.fy
    xn, yn = _normalize_axes(x, y, params.normalize)
    u = xn * params.s_x
    v = yn * params.s_y
    valid = np.isfinite(u) & np.isfinite(v)
    return RemapField(rows, cols, u, v, valid, params.grid_w, params.grid_h)


def affine_remap(mask: Mask, K: Intrinsics, params: RectifyParams) -> RemapField:
    """Remap obtained from a constant depth, i.e. a pure rescale of the masked crop."""
    flat = DepthMap(np.zeros(mask.data.shape))
    return unproject_remap(flat, mask, K, RectifyParams(
        d_shift=1.0, target_w=params.target_w, target_h=params.target_h,
        s_sample=params.s_sample, hole_kernel=params.hole_kernel, normalize=params.normalize,
    ))


def splat(image: Image, mask: Mask, remap: RemapField, target_w: int, target_h: int) -> SplatCanvas:
    """Scatter masked source pixels to their nearest target cells, summing overlaps."""
    if image.data.shape[:2] != mask.data.shape:
        raise ValueError("image and mask disagree on size")
    sel = remap.valid
    ui = np.floor(remap.u[sel] + 0.5).astype(np.int64)
    vi = np.floor(remap.v[sel] + 0.5).astype(np.int64)
    inside = (ui >= 0) & (ui < target_w) & (vi >= 0) & (vi < target_h)
    flat = vi[inside] * target_w + ui[inside]
    values = image.data[remap.rows[sel][inside], remap.cols[sel][inside]]
    n = target_w * target_h
    count = np.bincount(flat, minlength=n).reshape(target_h, target_w)
    accum = np.empty((target_h, target_w, image.channels))
    for c in range(image.channels):
        accum[:, :, c] = np.bincount(flat, weights=values[:, c], minlength=n).reshape(target_h, target_w)
    return SplatCanvas(accum, count)


def fill_holes_array(canvas: SplatCanvas, k: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Single-pass hole filling on raw values; returns ``(values, filled_validity)``.

    Pixels that received splats keep their averaged value; holes take the mean
    of valid pixels in the ``k x k`` window (clipped at the borders); holes
    with no valid neighbour become 0.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError("k must be an odd integer >= 3")
    values = canvas.normalized()
    valid = canvas.count > 0
    ones = np.ones((k, k))
    c_s = correlate(valid.astype(np.float64), ones, mode="constant", cval=0.0)
    out = values.copy()
    hole = ~valid
    fillable = hole & (c_s > 0)
    for c in range(values.shape[2]):
        sums = correlate(values[:, :, c] * valid, ones, mode="constant", cval=0.0)
        out[:, :, c][fillable] = sums[fillable] / c_s[fillable]
    out[hole & ~fillable] = 0.0
    return out, valid | fillable


def fill_holes(canvas: SplatCanvas, k: int = 5, return_mask: bool = False):
    """Image-valued wrapper of ``fill_holes_array``; with ``return_mask`` the filled-validity mask is returned too."""
    out, valid = fill_holes_array(canvas, k)
    img = Image(np.clip(out, 0.0, 1.0))
    if return_mask:
        return img, Mask(valid)
    return img


def rectify(image: Image, mask: Mask, depth: DepthMap, K: Intrinsics, params: RectifyParams) -> tuple[Image, Mask]:
    if image.data.shape[:2] != mask.data.shape or depth.data.shape != mask.data.shape:
        raise ValueError("image, mask and depth must share dimensions")
    remap = unproject_remap(depth, mask, K, params)
    canvas = splat(image, mask, remap, params.grid_w, params.grid_h)
    filled, valid = fill_holes(canvas, params.hole_kernel, return_mask=True)
    if (params.grid_w, params.grid_h) == (params.target_w, params.target_h):
        return filled, valid
    up = _resize_array(filled.data, params.target_w, params.target_h)
    up_mask = _resize_array(valid.data[:, :, None].astype(np.float64), params.target_w, params.target_h)
    return Image(np.clip(up, 0, 1), image.color_space), Mask(up_mask[:, :, 0] >= 0.5)


@dataclass(frozen=True)
class SweepRow:
    d_shift: float
    remap_deviation_px: float
    hole_fraction: float


def sweep_d_shift(
    image: Image,
    mask: Mask,
    depth: DepthMap,
    K: Intrinsics,
    params: RectifyParams,
    values: Sequence[float],
) -> list[SweepRow]:
    """Remap deviation from the constant-depth baseline and raw hole fraction per ``d_shift``."""
    values = list(values)
    if not values:
        raise ValueError("need at least one d_shift value")
    if any(not v > 0 for v in values):
        raise ValueError("d_shift values must be positive")
    base = affine_remap(mask, K, params)
    rows = []
    for d in values:
        p = RectifyParams(d, params.target_w, params.target_h, params.s_sample, params.hole_kernel, params.normalize)
        remap = unproject_remap(depth, mask, K, p)
        dev = float(np.mean(np.hypot(remap.u - base.u, remap.v - base.v)))
        canvas = splat(image, mask, remap, p.grid_w, p.grid_h)
        rows.append(SweepRow(float(d), dev, canvas.hole_fraction()))
    return rows


SWEEP_HEADER = ("d_shift", "remap_deviation_px", "hole_fraction")


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow([repr(r.d_shift), repr(r.remap_deviation_px), repr(r.hole_fraction)])
    return buf.getvalue()
