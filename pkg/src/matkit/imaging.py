"""Image, mask and material containers plus the I/O and resampling they need.

Arrays are stored height-major (``data[row, col, channel]``).  Material maps
use the usual texture convention: ``u`` grows with the column index and ``v``
grows *upward*, so row 0 is ``v = 1``.  Normal maps are tangent space with +X
to the right, +Y up and +Z out of the surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import cv2
import numpy as np

ColorSpace = Literal["linear", "display"]
Sampling = Literal["nearest", "bilinear"]

# Channel counts required per load kind.
KIND_CHANNELS = {
    "albedo": 3,
    "color": 3,
    "normal": 3,
    "roughness": 1,
    "height": 1,
    "depth": 1,
    "gray": 1,
    "mask": 1,
}

NORMAL_CONVENTION = "tangent-space, +X right, +Y up, +Z out; n = 2*pixel - 1"


class ImageFormatError(ValueError):
    """Raised for unreadable files, unsupported bit depths or channel mismatches."""


@dataclass(frozen=True, eq=False)
class Image:
    data: np.ndarray
    color_space: ColorSpace = "linear"

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            raise ValueError("image samples must lie in [0, 1]")
        object.__setattr__(self, "data", np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class Mask:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr.astype(bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True, eq=False)
class DepthMap:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("depth contains non-finite values")
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            raise ValueError("depth must be normalized to [0, 1]")
        object.__setattr__(self, "data", np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_raw(cls, raw: np.ndarray, mask: np.ndarray | None = None) -> tuple["DepthMap", tuple[float, float]]:
        """Min-max normalize ``raw`` over ``mask``; pixels outside the mask become 0.

        Returns the depth map and the ``(min, max)`` raw range.  A constant
        input (up to rounding) normalizes to all zeros.
        """
        raw = np.asarray(raw, dtype=np.float64)
        sel = np.isfinite(raw) if mask is None else (np.asarray(mask, bool) & np.isfinite(raw))
        if not sel.any():
            raise ValueError("no finite depth samples to normalize")
        lo = float(raw[sel].min())
        hi = float(raw[sel].max())
        out = np.zeros(raw.shape, dtype=np.float64)
        # Ranges at rounding level are treated as constant rather than amplified.
        if hi - lo > 1e-12 * max(abs(hi), abs(lo), 1.0):
            out[sel] = (raw[sel] - lo) / (hi - lo)
        return cls(out), (lo, hi)


@dataclass(frozen=True, eq=False)
class NormalMap:
    encoded: Image
    convention: str = NORMAL_CONVENTION

    def __post_init__(self) -> None:
        if self.encoded.channels != 3:
            raise ValueError("normal map must have 3 channels")

    def vectors(self) -> np.ndarray:
        return decode_normal(self.encoded.data)

    @classmethod
    def from_vectors(cls, vectors: np.ndarray) -> "NormalMap":
        return cls(Image(encode_normal(vectors)))


@dataclass(frozen=True, eq=False)
class MaterialSet:
    albedo: Image
    normal: NormalMap
    roughness: Image
    height: Image
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.albedo.channels != 3:
            raise ValueError("albedo must have 3 channels")
        if self.roughness.channels != 1 or self.height.channels != 1:
            raise ValueError("roughness and height must have 1 channel")
        shapes = {m.data.shape[:2] for m in (self.albedo, self.normal.encoded, self.roughness, self.height)}
        if len(shapes) != 1:
            raise ValueError(f"material maps disagree on resolution: {sorted(shapes)}")
        (h, w), = shapes
        if h != w:
            raise ValueError(f"material maps must be square, got {w}x{h}")

    @property
    def resolution(self) -> int:
        return self.albedo.width

    def maps(self) -> dict[str, Image]:
        return {
            "albedo": self.albedo,
            "normal": self.normal.encoded,
            "roughness": self.roughness,
            "height": self.height,
        }

    @classmethod
    def from_maps(cls, maps: dict[str, Image]) -> "MaterialSet":
        return cls(maps["albedo"], NormalMap(maps["normal"]), maps["roughness"], maps["height"])


MATERIAL_ATTRIBUTES = ("albedo", "normal", "roughness", "height")


# ---------------------------------------------------------------------------
# normals


def decode_normal(pixel: np.ndarray) -> np.ndarray:
    """Map encoded samples in [0, 1] to unit vectors (``n = 2p - 1``, renormalized)."""
    p = np.asarray(pixel, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError("normal samples need 3 components")
    v = 2.0 * p - 1.0
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("zero-length normal cannot be decoded")
    return v / norm


def encode_normal(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError("normal vectors need 3 components")
    norm = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-3):
        raise ValueError("normal vectors must be unit length (within 1e-3)")
    return np.clip((v + 1.0) * 0.5, 0.0, 1.0)


# ---------------------------------------------------------------------------
# sampling


def sample_bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray, mode: str = "clamp") -> np.ndarray:
    """Bilinearly sample ``data`` (HxWxC) at continuous pixel coordinates.

    ``x`` indexes columns and ``y`` rows, pixel centres sit on integers.
    ``mode`` is ``clamp`` (edge replicate), ``wrap`` (periodic) or ``zero``
    (zero outside ``[0, W-1] x [0, H-1]``).
    """
    h, w = data.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if mode == "wrap":
        x0, x1, y0, y1 = x0 % w, x1 % w, y0 % h, y1 % h
    elif mode in ("clamp", "zero"):
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
        if mode == "zero":
            inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
        x0, x1, y0, y1 = x0c, x1c, y0c, y1c
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if mode == "zero":
        out = np.where(inside[..., None], out, 0.0)
    return out


def sample_nearest(data: np.ndarray, x: np.ndarray, y: np.ndarray, mode: str = "clamp") -> np.ndarray:
    h, w = data.shape[:2]
    xi = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)
    yi = np.floor(np.asarray(y, dtype=np.float64) + 0.5).astype(np.int64)
    if mode == "wrap":
        return data[yi % h, xi % w]
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = data[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    if mode == "zero":
        out = np.where(inside[..., None], out, 0.0)
    return out


def resample_bilinear(image: Image, target_w: int, target_h: int) -> Image:
    """Corner-aligned bilinear resize (first and last samples map onto each other)."""
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (target_w, target_h) == (image.width, image.height):
        return image
    return Image(_resize_array(image.data, target_w, target_h), image.color_space)


def _resize_array(data: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    h, w = data.shape[:2]
    xs = np.linspace(0.0, w - 1, target_w) if target_w > 1 else np.zeros(1)
    ys = np.linspace(0.0, h - 1, target_h) if target_h > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return sample_bilinear(data, gx, gy, mode="clamp")


# ---------------------------------------------------------------------------
# rotation alignment


def _quarter_turns(alpha: float) -> int | None:
    k = alpha / (math.pi / 2)
    kr = round(k)
    if abs(k - kr) < 1e-12:
        return kr % 4
    return None


def _rotate_normals_xy(vectors: np.ndarray, alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    out = vectors.copy()
    out[..., 0] = c * vectors[..., 0] - s * vectors[..., 1]
    out[..., 1] = s * vectors[..., 0] + c * vectors[..., 1]
    return out


def rotate_map(data: np.ndarray, alpha: float, sampling: Sampling = "bilinear") -> np.ndarray:
    """Rotate an HxWxC array counter-clockwise (as displayed) by ``alpha`` about its centre.

    The map is treated as periodic: samples falling outside are wrapped.
    """
    k = _quarter_turns(alpha)
    if k is not None:
        return np.rot90(data, k=k, axes=(0, 1)).copy()
    h, w = data.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    # Display frame has y pointing up; invert the rotation to find each source sample.
    dx = cols - cx
    dy_up = cy - rows
    c, s = math.cos(alpha), math.sin(alpha)
    src_x = cx + c * dx + s * dy_up
    src_y = cy - (-s * dx + c * dy_up)
    if sampling == "nearest":
        return sample_nearest(data, src_x, src_y, mode="wrap")
    if sampling == "bilinear":
        return sample_bilinear(data, src_x, src_y, mode="wrap")
    raise ValueError(f"unknown sampling {sampling!r}")


def rotate_material_set(mat: MaterialSet, alpha: float, sampling: Sampling = "bilinear") -> MaterialSet:
    """Rotate every map of ``mat`` counter-clockwise by ``alpha`` radians.

    Normal vectors are re-oriented by the same angle so that shading stays
    consistent with the rotated geometry.  Quarter turns are exact index
    permutations regardless of ``sampling``.
    """
    if math.remainder(alpha, 2 * math.pi) == 0.0:
        return mat
    albedo = Image(rotate_map(mat.albedo.data, alpha, sampling), mat.albedo.color_space)
    roughness = Image(rotate_map(mat.roughness.data, alpha, sampling))
    height = Image(rotate_map(mat.height.data, alpha, sampling))
    enc = rotate_map(mat.normal.encoded.data, alpha, sampling)
    k = _quarter_turns(alpha)
    if k is not None:
        # Exact channel permutation: (x, y) -> (-y, x) per quarter turn, in encoded space.
        for _ in range(k):
            r, g = enc[..., 0].copy(), enc[..., 1].copy()
            enc[..., 0] = 1.0 - g
            enc[..., 1] = r
        normal = NormalMap(Image(enc))
    else:
        vec = _rotate_normals_xy(decode_normal(enc), alpha)
        normal = NormalMap(Image(encode_normal(vec)))
    return MaterialSet(albedo, normal, roughness, height, meta=dict(mat.meta))


# ---------------------------------------------------------------------------
# file I/O


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ImageFormatError(f"{path}: not a PFM file")
        channels = 3 if header == b"PF" else 1
        dims = fh.readline().split()
        while len(dims) < 2:
            dims += fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        endian = "<" if scale < 0 else ">"
        raw = np.frombuffer(fh.read(), dtype=endian + "f4")
    if raw.size != w * h * channels:
        raise ImageFormatError(f"{path}: truncated PFM payload")
    # PFM stores rows bottom-to-top.
    return raw.reshape(h, w, channels)[::-1].astype(np.float64)


def _write_pfm(path: Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    header = b"PF\n" if c == 3 else b"Pf\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_raw(path: str | Path) -> np.ndarray:
    """Read a PNG (normalized to [0, 1]) or PFM (passed through) as HxWxC float64."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path)
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ImageFormatError(f"{path}: unreadable image")
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"{path}: unsupported sample type {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.shape[2] == 3:
        arr = arr[:, :, ::-1]
    return arr.astype(np.float64) / scale


def load_image(path: str | Path, kind: str = "albedo") -> Image:
    """Load ``path`` as the given map kind.

    8/16-bit PNGs are divided by their full-scale value.  PFM data is passed
    through, except for ``depth`` loads which are always min-max normalized.
    """
    if kind not in KIND_CHANNELS:
        raise ValueError(f"unknown image kind {kind!r}")
    arr = read_raw(path)
    want = KIND_CHANNELS[kind]
    if arr.shape[2] != want:
        raise ImageFormatError(f"{path}: expected {want} channel(s) for {kind}, found {arr.shape[2]}")
    if kind == "depth":
        finite = np.isfinite(arr)
        lo, hi = arr[finite].min(), arr[finite].max()
        arr = np.where(finite, (arr - lo) / (hi - lo) if hi > lo else 0.0, 0.0)
    return Image(arr)


def load_depth(path: str | Path) -> DepthMap:
    return DepthMap(load_image(path, "depth").data[:, :, 0])


def load_mask(path: str | Path) -> Mask:
    """Any nonzero sample counts as inside the mask."""
    arr = read_raw(path)
    return Mask(np.any(arr > 0, axis=2))


def save_image(image: Image | np.ndarray, path: str | Path, bit_depth: int = 8) -> None:
    """Write a PNG (8 or 16 bit) or, for ``.pfm`` paths, a float PFM."""
    data = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        _write_pfm(path, data)
        return
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    full = 255 if bit_depth == 8 else 65535
    q = np.floor(np.clip(data, 0.0, 1.0) * full + 0.5).astype(np.uint8 if bit_depth == 8 else np.uint16)
    if q.shape[2] == 3:
        q = q[:, :, ::-1]
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")


def save_mask(mask: Mask, path: str | Path) -> None:
    save_image(mask.data.astype(np.float64), path, bit_depth=8)


MATERIAL_FILES = {
    "albedo": ("albedo.png",),
    "normal": ("normal.png",),
    "roughness": ("roughness.png",),
    "height": ("height.png", "height.pfm"),
}


def load_material_set(directory: str | Path) -> MaterialSet:
    directory = Path(directory)
    maps = {}
    for name, candidates in MATERIAL_FILES.items():
        for fname in candidates:
            if (directory / fname).is_file():
                maps[name] = load_image(directory / fname, name)
                break
        else:
            raise FileNotFoundError(f"{directory}: missing {name} map")
    return MaterialSet.from_maps(maps)


def save_material_set(mat: MaterialSet, directory: str | Path, bit_depth: int = 16) -> dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, img in mat.maps().items():
        target = directory / f"{name}.png"
        save_image(img, target, bit_depth=bit_depth)
        written[name] = target.name
    return written
