"""Thin-plate spline fitting, evaluation and backward image warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Image, Mask, sample_bilinear


class SingularSystemError(ValueError):
    """Control points are duplicated or collinear, the TPS system has no unique solution."""


def tps_kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 log r^2 expressed in squared distance, with U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = r2[pos] * np.log(r2[pos])
    return out


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@dataclass(frozen=True, eq=False)
class TpsModel:
    control_points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n, m)
    affine: np.ndarray  # (3, m): rows are constant, x and y coefficients
    regularization: float = 0.0
    targets: np.ndarray | None = None

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]

    def affine_matrix(self) -> np.ndarray:
        """Affine part as an ``m x 3`` matrix acting on ``(x, y, 1)``."""
        return np.column_stack([self.affine[1], self.affine[2], self.affine[0]])

    def bending_energy(self) -> float:
        K = tps_kernel(_pairwise_sq(self.control_points, self.control_points))
        return float(np.trace(self.weights.T @ K @ self.weights))

    def side_conditions(self) -> np.ndarray:
        """``P^T w`` for ``P = [1, x, y]``; zero for a valid fit."""
        P = np.column_stack([np.ones(len(self.control_points)), self.control_points])
        return P.T @ self.weights

    def to_dict(self) -> dict:
        return {
            "control_points": self.control_points.tolist(),
            "targets": None if self.targets is None else self.targets.tolist(),
            "regularization": self.regularization,
        }


def _check_geometry(src: np.ndarray) -> None:
    if len(np.unique(src, axis=0)) != len(src):
        raise SingularSystemError("duplicate control points")
    P = np.column_stack([np.ones(len(src)), src])
    if np.linalg.matrix_rank(P) < 3:
        raise SingularSystemError("control points are collinear")


def tps_fit(src, dst, lam: float = 0.0) -> TpsModel:
    """Fit a TPS mapping ``src`` points to ``dst`` (scalars or points).

    ``lam = 0`` interpolates exactly; ``lam > 0`` trades fidelity for lower
    bending energy.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src must be an (n, 2) array")
    if dst.ndim == 1:
        dst = dst[:, None]
    n = src.shape[0]
    if n < 3 or dst.shape[0] != n:
        raise ValueError("need at least 3 control points with matching targets")
    if lam < 0:
        raise ValueError("regularization must be >= 0")
    _check_geometry(src)

    K = tps_kernel(_pairwise_sq(src, src))
    P = np.column_stack([np.ones(n), src])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K + lam * np.eye(n)
    L[:n, n:] = P
    L[n:, :n] = P.T
    rhs = np.zeros((n + 3, dst.shape[1]))
    rhs[:n] = dst
    try:
        sol = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("non-finite TPS solution")
    return TpsModel(src, sol[:n], sol[n:], float(lam), dst)


def tps_eval(model: TpsModel, points) -> np.ndarray:
    """Evaluate ``affine(p) + sum_i w_i U(|p - c_i|)``; returns ``(k, m)``."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    U = tps_kernel(_pairwise_sq(pts, model.control_points))
    P = np.column_stack([np.ones(len(pts)), pts])
    out = P @ model.affine + U @ model.weights
    return out[0] if single else out


def identity_model() -> TpsModel:
    src = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return tps_fit(src, src)


def tps_warp_image(image: Image, model: TpsModel, with_mask: bool = False):
    """Backward warp: ``out(p) = image(model(p))`` with bilinear sampling.

    ``model`` maps output pixel coordinates ``(col, row)`` to source
    coordinates.  Samples that land outside the source are 0 and invalid.
    """
    if model.output_dim != 2:
        raise ValueError("image warping needs a point-valued TPS model")
    h, w = image.height, image.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    grid = np.column_stack([cols.ravel(), rows.ravel()])
    src = np.empty_like(grid)
    # Chunk rows to bound the (pixels x control points) kernel matrix.
    step = max(1, 2_000_000 // max(1, len(model.control_points)))
    for start in range(0, len(grid), step):
        src[start:start + step] = tps_eval(model, grid[start:start + step])
    sx = src[:, 0].reshape(h, w)
    sy = src[:, 1].reshape(h, w)
    tol = 1e-9
    valid = (sx >= -tol) & (sx <= w - 1 + tol) & (sy >= -tol) & (sy <= h - 1 + tol)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    out = sample_bilinear(image.data, sx, sy, mode="clamp")
    out[~valid] = 0.0
    warped = Image(out, image.color_space)
    return (warped, Mask(valid)) if with_mask else warped
