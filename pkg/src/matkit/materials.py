"""Seeded procedural tileable materials used by tests, demos and the synth CLI."""
from __future__ import annotations

import numpy as np

from .imaging import Image, MaterialSet, NormalMap, encode_normal


def periodic_noise(rng: np.random.Generator, size: int, cutoff: float = 6.0, channels: int = 1) -> np.ndarray:
    """Band-limited periodic noise in [0, 1], shape ``(size, size, channels)``.

    White noise is low-passed in the Fourier domain with a Gaussian of width
    ``cutoff`` cycles per tile, so the result tiles seamlessly.
    """
    fy = np.fft.fftfreq(size)[:, None] * size
    fx = np.fft.fftfreq(size)[None, :] * size
    envelope = np.exp(-(fx**2 + fy**2) / (2.0 * cutoff**2))
    out = np.empty((size, size, channels))
    for c in range(channels):
        spec = np.fft.fft2(rng.standard_normal((size, size))) * envelope
        field = np.real(np.fft.ifft2(spec))
        lo, hi = field.min(), field.max()
        out[:, :, c] = (field - lo) / (hi - lo) if hi > lo else 0.5
    return out


def normals_from_height(height: np.ndarray, strength: float = 4.0) -> np.ndarray:
    """Tangent-space normals of a periodic height field (rows grow downward, +Y up)."""
    h = height[:, :, 0] if height.ndim == 3 else height
    n = h.shape[0]
    dhdx = (np.roll(h, -1, axis=1) - np.roll(h, 1, axis=1)) * 0.5 * n
    dhdy_up = -(np.roll(h, -1, axis=0) - np.roll(h, 1, axis=0)) * 0.5 * n
    scale = strength / n
    v = np.stack([-dhdx * scale, -dhdy_up * scale, np.ones_like(h)], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def procedural_material(seed: int, size: int = 256, cutoff: float = 6.0) -> MaterialSet:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.25, 0.75, size=3)
    tint = periodic_noise(rng, size, cutoff, channels=3)
    albedo = np.clip(0.35 * base + 0.65 * tint, 0.0, 1.0)
    height = periodic_noise(rng, size, cutoff)
    roughness = np.clip(0.2 + 0.6 * periodic_noise(rng, size, cutoff * 0.5), 0.0, 1.0)
    normal = encode_normal(normals_from_height(height))
    return MaterialSet(
        Image(albedo),
        NormalMap(Image(normal)),
        Image(roughness),
        Image(height),
        meta={"source": "procedural", "seed": seed},
    )


def checker_material(size: int = 256, cells: int = 8, blur: float = 1.5) -> MaterialSet:
    """Soft checkerboard with a coloured gradient; handy for geometric checks."""
    idx = np.arange(size)
    cx = (idx[None, :] * cells // size) % 2
    cy = (idx[:, None] * cells // size) % 2
    board = (cx ^ cy).astype(np.float64)
    if blur > 0:
        from scipy.ndimage import gaussian_filter

        board = gaussian_filter(board, blur, mode="wrap")
    phase = 2 * np.pi * idx / size
    r = 0.15 + 0.7 * board
    g = 0.5 + 0.3 * np.sin(phase)[None, :] * np.ones((size, 1))
    b = 0.5 + 0.3 * np.cos(phase)[:, None] * np.ones((1, size))
    albedo = np.stack([r, g, b], axis=-1)
    flat = np.zeros((size, size, 3))
    flat[..., 2] = 1.0
    return MaterialSet(
        Image(albedo),
        NormalMap(Image(encode_normal(flat))),
        Image(np.full((size, size, 1), 0.5)),
        Image(np.full((size, size, 1), 0.5)),
        meta={"source": "checker", "cells": cells},
    )
