"""Diffusion math at desk scale.

A pooled linear codec stands in for the VAE so latent-space claims stay
testable: each map is average-pooled by ``factor`` and its channels are
lifted to 4 by a fixed seeded matrix with full column rank.  On top of the
16-channel stack sit the linear noise schedule, forward noising, the noise
prediction loss, KV-injection attention and a deterministic DDIM sampler
with optional noise rolling.  Denoisers are plain callables
``(z_t, t, condition) -> eps_hat`` operating on ``(C, h, w)`` arrays.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Protocol

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import MATERIAL_ATTRIBUTES, Image, MaterialSet, NormalMap, sample_bilinear

LATENT_CHANNELS_PER_MAP = 4
MAP_CHANNELS = {"albedo": 3, "normal": 3, "roughness": 1, "height": 1}
MATERIAL_LAYOUT = {name: (4 * i, 4 * i + 4) for i, name in enumerate(MATERIAL_ATTRIBUTES)}
IMAGE_LAYOUT = {"image": (0, 4)}
CODEC_SEED = 20240917
DEFAULT_FACTOR = 8


@dataclass(frozen=True, eq=False)
class LatentStack:
    """Channel-first latent tensor with named channel ranges."""

    tensor: np.ndarray  # (C, h, w)
    layout: dict[str, tuple[int, int]]

    def __post_init__(self) -> None:
        z = np.asarray(self.tensor, dtype=np.float64)
        if z.ndim != 3:
            raise ValueError(f"latent must be (C, h, w), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite values")
        stop = max(s for _, s in self.layout.values())
        if stop != z.shape[0]:
            raise ValueError(f"layout covers {stop} channels, tensor has {z.shape[0]}")
        if self.layout == MATERIAL_LAYOUT and z.shape[0] != 16:
            raise ValueError("material latents have 16 channels")
        object.__setattr__(self, "tensor", z)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.tensor.shape

    @property
    def h(self) -> int:
        return self.tensor.shape[1]

    @property
    def w(self) -> int:
        return self.tensor.shape[2]

    def part(self, name: str) -> np.ndarray:
        a, b = self.layout[name]
        return self.tensor[a:b]

    def with_tensor(self, tensor: np.ndarray) -> "LatentStack":
        return LatentStack(tensor, self.layout)


def concat_latents(parts: dict[str, np.ndarray]) -> LatentStack:
    """Channel-wise concatenation in the given order, recording each part's range."""
    layout, start, arrays = {}, 0, []
    for name, arr in parts.items():
        arr = np.asarray(arr, dtype=np.float64)
        layout[name] = (start, start + arr.shape[0])
        start += arr.shape[0]
        arrays.append(arr)
    return LatentStack(np.concatenate(arrays, axis=0), layout)


# ---------------------------------------------------------------------------
# stub codec


def lift_matrix(in_channels: int, seed: int = CODEC_SEED) -> np.ndarray:
    """Fixed ``4 x in_channels`` lift with full column rank (hence left-invertible)."""
    rng = np.random.default_rng([seed, in_channels])
    while True:
        L = rng.standard_normal((LATENT_CHANNELS_PER_MAP, in_channels))
        if np.linalg.matrix_rank(L) == in_channels and np.linalg.cond(L) < 20:
            return L


def block_mean(data: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = data.shape
    if h % factor or w % factor:
        raise ValueError(f"side {w}x{h} not divisible by factor {factor}")
    return data.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def _encode_array(data: np.ndarray, factor: int) -> np.ndarray:
    pooled = block_mean(data, factor)  # (h, w, c)
    L = lift_matrix(pooled.shape[2])
    return np.einsum("kc,ijc->kij", L, pooled)


def _upsample(low: np.ndarray, factor: int, mode: str) -> np.ndarray:
    """``(h, w, c)`` to ``(h f, w f, c)``; ``nearest`` repeats blocks, ``bilinear-wrap`` interpolates periodically."""
    if mode == "nearest":
        return np.repeat(np.repeat(low, factor, axis=0), factor, axis=1)
    if mode == "bilinear-wrap":
        h, w = low.shape[:2]
        # Output pixel centres expressed in low-resolution pixel-centre coordinates.
        xs = (np.arange(w * factor) + 0.5) / factor - 0.5
        ys = (np.arange(h * factor) + 0.5) / factor - 0.5
        gx, gy = np.meshgrid(xs, ys)
        return sample_bilinear(low, gx, gy, mode="wrap")
    raise ValueError(f"unknown upsample mode {mode!r}")


def _decode_array(z: np.ndarray, channels: int, factor: int, upsample: str) -> np.ndarray:
    L = lift_matrix(channels)
    low = np.einsum("ck,kij->ijc", np.linalg.pinv(L), z)
    return _upsample(low, factor, upsample)


def stub_encode(x: MaterialSet | Image, factor: int = DEFAULT_FACTOR) -> LatentStack:
    """Encode a material (16 channels) or a condition image (4 channels)."""
    if isinstance(x, MaterialSet):
        maps = x.maps()
        return concat_latents({k: _encode_array(maps[k].data, factor) for k in MATERIAL_ATTRIBUTES})
    if isinstance(x, Image):
        if x.height != x.width:
            raise ValueError("condition image must be square")
        return LatentStack(_encode_array(x.data, factor), dict(IMAGE_LAYOUT))
    raise TypeError(f"cannot encode {type(x).__name__}")


def stub_decode_arrays(z: LatentStack, factor: int = DEFAULT_FACTOR, upsample: str = "nearest") -> dict[str, np.ndarray]:
    """Unclipped decoded maps, ``(H, W, c)`` each."""
    if z.layout != MATERIAL_LAYOUT:
        raise ValueError("only material latents can be decoded to a MaterialSet")
    return {k: _decode_array(z.part(k), MAP_CHANNELS[k], factor, upsample) for k in MATERIAL_ATTRIBUTES}


def stub_decode(z: LatentStack, factor: int = DEFAULT_FACTOR, upsample: str = "nearest") -> MaterialSet:
    """Pseudo-inverse lift then upsample; values are clipped to [0, 1].

    Normal samples are clipped but not renormalized, so the encoded map is
    returned as the codec reconstructs it.
    """
    arrays = stub_decode_arrays(z, factor, upsample)
    maps = {k: Image(np.clip(v, 0.0, 1.0)) for k, v in arrays.items()}
    return MaterialSet(maps["albedo"], NormalMap(maps["normal"]), maps["roughness"], maps["height"])


# ---------------------------------------------------------------------------
# schedule and forward process


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray  # beta[t - 1] for t = 1..T
    alpha_bar_full: np.ndarray  # index t in 0..T, alpha_bar_full[0] = 1

    @property
    def T(self) -> int:
        return len(self.beta)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar_full[t])


def make_schedule(T: int = 1000, kind: str = "linear", beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    ab = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(beta, ab)


def _arr(z) -> np.ndarray:
    return z.tensor if isinstance(z, LatentStack) else np.asarray(z, dtype=np.float64)


def _wrap_like(ref, arr: np.ndarray):
    return ref.with_tensor(arr) if isinstance(ref, LatentStack) else arr


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def forward_mix(z0, eps, alpha_bar: float):
    """``sqrt(ab) z0 + sqrt(1 - ab) eps`` for an explicit cumulative product."""
    a, e = _arr(z0), _arr(eps)
    _check_shapes(a, e)
    if not 0 <= alpha_bar <= 1:
        raise ValueError("alpha_bar must lie in [0, 1]")
    return _wrap_like(z0, math.sqrt(alpha_bar) * a + math.sqrt(1.0 - alpha_bar) * e)


def forward_diffuse(z0, t: int, eps, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    return forward_mix(z0, eps, schedule.alpha_bar(t))


def diffusion_loss(eps, eps_hat) -> float:
    a, b = _arr(eps), _arr(eps_hat)
    _check_shapes(a, b)
    return float(np.mean((a - b) ** 2))


def diffusion_loss_grad(eps, eps_hat) -> np.ndarray:
    """Gradient of the loss with respect to ``eps_hat``: ``2 (eps_hat - eps) / N``."""
    a, b = _arr(eps), _arr(eps_hat)
    _check_shapes(a, b)
    return 2.0 * (b - a) / a.size


# ---------------------------------------------------------------------------
# attention


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def attention_weights(Q, K) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    d = Q.shape[1]
    if d == 0:
        raise ValueError("feature dimension d must be >= 1")
    if K.shape[1] != d:
        raise ValueError(f"Q has d={d}, K has d={K.shape[1]}")
    if Q.shape[0] < 1 or K.shape[0] < 1:
        raise ValueError("need at least one query and one key")
    return softmax_rows(Q @ K.T / math.sqrt(d))


def kv_injection_attention(Q, K, V) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d)) V`` with keys and values from the reference branch.

    The output has one row per query, whatever the number of keys.
    """
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    W = attention_weights(Q, K)
    if V.shape[0] != W.shape[1]:
        raise ValueError("K and V must have the same number of rows")
    return W @ V


# ---------------------------------------------------------------------------
# denoisers


class Denoiser(Protocol):
    def __call__(self, z_t: np.ndarray, t: int, condition: np.ndarray | None) -> np.ndarray: ...


@dataclass
class OracleDenoiser:
    """Returns the exact noise for a known clean latent passed as the condition."""

    schedule: NoiseSchedule

    def __call__(self, z_t: np.ndarray, t: int, condition: np.ndarray | None) -> np.ndarray:
        if condition is None:
            raise ValueError("oracle denoiser needs the clean latent as condition")
        ab = self.schedule.alpha_bar(t)
        return (z_t - math.sqrt(ab) * condition) / math.sqrt(1.0 - ab)


@dataclass
class SmoothingDenoiser:
    """Toy denoiser that predicts ``z0 ~ sqrt(ab) * blur(z_t)`` and returns the implied noise.

    ``mode="wrap"`` blurs periodically and is exactly shift-equivariant;
    ``mode="reflect"`` blurs inside a window with mirrored edges and is not.
    The condition is ignored.
    """

    schedule: NoiseSchedule
    sigma: float = 1.5
    mode: Literal["wrap", "reflect"] = "wrap"

    def predict_z0(self, z_t: np.ndarray, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        return math.sqrt(ab) * gaussian_filter(z_t, sigma=(0, self.sigma, self.sigma), mode=self.mode)

    def __call__(self, z_t: np.ndarray, t: int, condition: np.ndarray | None) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        return (z_t - math.sqrt(ab) * self.predict_z0(z_t, t)) / math.sqrt(1.0 - ab)


def periodic_denoiser(schedule: NoiseSchedule, sigma: float = 1.5) -> SmoothingDenoiser:
    return SmoothingDenoiser(schedule, sigma, "wrap")


def windowed_denoiser(schedule: NoiseSchedule, sigma: float = 1.5) -> SmoothingDenoiser:
    return SmoothingDenoiser(schedule, sigma, "reflect")


# ---------------------------------------------------------------------------
# sampling


def ddim_step(z_t, t: int, t_prev: int, denoiser: Callable, condition, schedule: NoiseSchedule):
    """Deterministic (eta = 0) update from ``t`` to ``t_prev``."""
    if t_prev > t or t_prev < 0:
        raise ValueError("need 0 <= t_prev <= t")
    if t_prev == t:
        return z_t
    z = _arr(z_t)
    ab_t = schedule.alpha_bar(t)
    if ab_t <= 0:
        raise ZeroDivisionError("alpha_bar_t is zero")
    cond = None if condition is None else _arr(condition)
    eps_hat = np.asarray(denoiser(z, t, cond), dtype=np.float64)
    _check_shapes(z, eps_hat)
    z0_hat = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    ab_p = schedule.alpha_bar(t_prev)
    out = math.sqrt(ab_p) * z0_hat + math.sqrt(1.0 - ab_p) * eps_hat
    return _wrap_like(z_t, out)


def roll_latent(z: np.ndarray, dy: int, dx: int) -> np.ndarray:
    return np.roll(z, (dy, dx), axis=(-2, -1))


def unroll_latent(z: np.ndarray, dy: int, dx: int) -> np.ndarray:
    return np.roll(z, (-dy, -dx), axis=(-2, -1))


def timesteps(steps: int, T: int) -> list[int]:
    """Descending integer schedule from ``T`` to 0 with ``steps`` transitions (fewer if T is small)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    return [int(t) for t in dict.fromkeys(ts.tolist())]


def sample(
    denoiser: Callable,
    condition,
    shape: tuple[int, int, int],
    steps: int,
    schedule: NoiseSchedule,
    noise_rolling: bool | str = False,
    rng: np.random.Generator | None = None,
    layout: dict | None = None,
):
    """DDIM from pure noise.

    With rolling on, every step draws ``(dy, dx)`` uniformly over the latent
    extent, rolls the latent (and a spatial condition) before the denoiser
    call and rolls the result back afterwards.
    """
    if isinstance(noise_rolling, str):
        if noise_rolling not in ("on", "off"):
            raise ValueError("noise_rolling must be on or off")
        noise_rolling = noise_rolling == "on"
    rng = np.random.default_rng(0) if rng is None else rng
    ts = timesteps(steps, schedule.T)
    z = rng.standard_normal(shape)
    cond = None if condition is None else _arr(condition)
    h, w = shape[-2:]
    for t, t_prev in zip(ts[:-1], ts[1:]):
        if noise_rolling:
            dy, dx = int(rng.integers(h)), int(rng.integers(w))
            c = None if cond is None else roll_latent(cond, dy, dx)
            z = unroll_latent(ddim_step(roll_latent(z, dy, dx), t, t_prev, denoiser, c, schedule), dy, dx)
        else:
            z = ddim_step(z, t, t_prev, denoiser, cond, schedule)
    if layout is None:
        layout = MATERIAL_LAYOUT if shape[0] == 16 else {"latent": (0, shape[0])}
    return LatentStack(z, layout)


# ---------------------------------------------------------------------------
# latent dumps


def save_latent(z: LatentStack, prefix: str | Path) -> tuple[Path, Path]:
    """Raw little-endian float32 payload plus a JSON sidecar with shape and layout."""
    prefix = Path(prefix)
    raw = prefix.with_name(prefix.name + ".f32")
    meta = prefix.with_name(prefix.name + ".json")
    raw.write_bytes(z.tensor.astype("<f4").tobytes())
    header = {"shape": list(z.shape), "dtype": "float32-le", "layout": {k: list(v) for k, v in z.layout.items()}}
    meta.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return raw, meta


def load_latent(prefix: str | Path) -> LatentStack:
    prefix = Path(prefix)
    header = json.loads(prefix.with_name(prefix.name + ".json").read_text())
    data = np.frombuffer(prefix.with_name(prefix.name + ".f32").read_bytes(), dtype="<f4")
    tensor = data.astype(np.float64).reshape(header["shape"])
    return LatentStack(tensor, {k: tuple(v) for k, v in header["layout"].items()})
