"""Independent reference implementations used to check the library.

Nothing here calls into the code under test except for plain data types and
the texture sampler, so agreement is meaningful.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d


def moller_trumbore(orig, direction, v0, v1, v2, eps=1e-12):
    """Ray/triangle intersection against arrays of triangles.

    ``v0, v1, v2`` are ``(n, 3)``; returns the ray parameter per triangle,
    ``inf`` where the ray misses.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = orig - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    tol = 1e-9
    hit = ok & (u >= -tol) & (u <= 1 + tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > 0)
    return np.where(hit, t, np.inf)


def pixel_ray(pose_rotation, K, col, row):
    """World-space direction through a pixel centre (camera x right, y down, z forward)."""
    d_cam = np.array([(col - K.cx) / K.fx, (row - K.cy) / K.fy, 1.0])
    return pose_rotation.T @ d_cam


def look_at_basis(position, target, up):
    """Rows: right, down, forward."""
    f = np.asarray(target, float) - np.asarray(position, float)
    f /= np.linalg.norm(f)
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    return np.stack([r, np.cross(f, r), f])


def ray_cast_depth(verts_flat, faces, pose, K, col, row):
    """Camera-space Z of the nearest triangle hit by the pixel ray, or None."""
    Rm = look_at_basis(pose.position, pose.target, pose.up_hint)
    d = pixel_ray(Rm, K, col, row)
    t = moller_trumbore(pose.position, d, verts_flat[faces[:, 0]], verts_flat[faces[:, 1]], verts_flat[faces[:, 2]])
    best = t.min()
    if not np.isfinite(best):
        return None
    hit = pose.position + best * d
    return float((Rm @ (hit - pose.position))[2])


def blockwise_mean(x: np.ndarray, f: int) -> np.ndarray:
    """Per-block mean replicated back to full size, via explicit loops."""
    h, w, c = x.shape
    out = np.empty_like(x)
    for i in range(0, h, f):
        for j in range(0, w, f):
            out[i:i + f, j:j + f] = x[i:i + f, j:j + f].reshape(-1, c).mean(axis=0)
    return out


def softmax_attention(Q, K, V):
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    out = np.zeros((Q.shape[0], V.shape[1]))
    for i, q in enumerate(Q):
        logits = [float(q @ k) / math.sqrt(Q.shape[1]) for k in K]
        m = max(logits)
        e = [math.exp(l - m) for l in logits]
        s = sum(e)
        out[i] = sum((ei / s) * V[j] for j, ei in enumerate(e))
    return out


def _gauss(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-x**2 / (2 * sigma**2))
    return g / g.sum()


def ssim_reference(a, b, mask=None):
    """Straight transcription of windowed SSIM, optionally averaged over a mask."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if mask is not None:
        a = a * mask[..., None]
        b = b * mask[..., None]
    g = _gauss()

    def f(x):
        return correlate1d(correlate1d(x, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")

    maps = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = f(x), f(y)
        vx, vy, cxy = f(x * x) - mx**2, f(y * y) - my**2, f(x * y) - mx * my
        maps.append((2 * mx * my + 1e-4) * (2 * cxy + 9e-4) / ((mx**2 + my**2 + 1e-4) * (vx + vy + 9e-4)))
    m = np.mean(maps, axis=0)
    return float(m.mean() if mask is None else m[mask].mean())


def rot2(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def canonical_crop(surface_uv, alpha, texture, T, sampler):
    """Texture as a perfect fronto-parallel rectifier would show the visible region.

    ``surface_uv`` holds the UVs of visible pixels.  The rendered view shows
    the texture turned by ``pi/2 - alpha``; the crop spans the bounding box of
    the visible UVs in that frame, row 0 at the top.
    """
    q = (surface_uv - 0.5) @ rot2(math.pi / 2 - alpha).T
    lo, hi = q.min(0), q.max(0)
    jj, ii = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    qx = lo[0] + ii / (T - 1) * (hi[0] - lo[0])
    qy = hi[1] - jj / (T - 1) * (hi[1] - lo[1])
    uv = np.stack([qx, qy], -1) @ rot2(alpha - math.pi / 2).T + 0.5
    n = texture.shape[0]
    px = uv[..., 0] * n - 0.5
    py = (1.0 - uv[..., 1]) * n - 0.5
    return sampler(texture, px, py, mode="wrap")


def bbox_crop(rgb, mask, T, resize):
    rows, cols = np.nonzero(mask)
    r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
    crop = rgb[r0:r1 + 1, c0:c1 + 1]
    cm = mask[r0:r1 + 1, c0:c1 + 1].astype(float)[..., None]
    return resize(crop, T, T), resize(cm, T, T)[..., 0] >= 0.5


def pose_from_tilt(tilt, azimuth, R, target):
    """Camera on a sphere of radius R at the given polar tilt and position azimuth."""
    pos = np.array([R * math.sin(tilt) * math.cos(azimuth), R * math.sin(tilt) * math.sin(azimuth), R * math.cos(tilt)])
    return pos, np.asarray(target, float)
