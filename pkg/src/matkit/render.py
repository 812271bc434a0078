"""Desk-scale stand-in for the synthetic renderer.

A planar grid is bent by a thin-plate spline, textured through its UVs and
rasterized with a pinhole camera, a z-buffer and perspective-correct
interpolation.  Shading is ambient + Lambert + Blinn-Phong driven by all four
material maps.

World frame: the undeformed plane lies in ``z = 0`` with ``u`` along +x and
``v`` along +y.  Camera frame: +x right, +y down, +z forward, so pixels are
``u = cx + fx X/Z`` and ``v = cy + fy Y/Z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import DepthMap, Image, MaterialSet, Mask, decode_normal, sample_bilinear
from .rectify import Intrinsics
from .tps import TpsModel, tps_eval, tps_fit


class RenderError(ValueError):
    pass


class CameraInsideGeometryError(RenderError):
    pass


class DegenerateProjectionError(RenderError):
    pass


class UndefinedAzimuthError(ValueError):
    pass


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


@dataclass(frozen=True, eq=False)
class CameraPose:
    position: np.ndarray
    target: np.ndarray
    up_hint: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self) -> None:
        for name in ("position", "target", "up_hint"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if np.array_equal(self.position, self.target):
            raise ValueError("camera position and target coincide")

    def view_vector(self) -> np.ndarray:
        return _unit(self.target - self.position)

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the right, down and forward axes."""
        fwd = self.view_vector()
        for up in (self.up_hint, np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])):
            right = np.cross(fwd, up)
            if np.linalg.norm(right) > 1e-9:
                break
        right = _unit(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ self.rotation().T

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "target": self.target.tolist(),
            "up": self.up_hint.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["position"]), np.array(d["target"]), np.array(d["up"]))


def view_azimuth(pose: CameraPose) -> float:
    """``atan2(v_y, v_x)`` of the view vector, in ``(-pi, pi]``."""
    v = pose.target - pose.position
    if math.hypot(v[0], v[1]) <= 1e-12 * np.linalg.norm(v):
        raise UndefinedAzimuthError("view vector is vertical; azimuth undefined")
    a = math.atan2(v[1], v[0])
    return math.pi if a == -math.pi else a


def sample_camera(rng: np.random.Generator, R: float, r_target: float) -> CameraPose:
    """Camera on the upper cap (z > 0.1 R) of a sphere of radius ``R``.

    The look-at target is drawn on the concentric sphere of radius
    ``r_target``.  Heights are uniform, which is uniform in area on the cap.
    """
    if not R > r_target >= 0:
        raise ValueError("need R > r_target >= 0")
    z = rng.uniform(0.1 * R, R)
    while z <= 0.1 * R:
        z = rng.uniform(0.1 * R, R)
    phi = rng.uniform(-math.pi, math.pi)
    rho = math.sqrt(max(R * R - z * z, 0.0))
    position = np.array([rho * math.cos(phi), rho * math.sin(phi), z])
    if r_target > 0:
        d = rng.standard_normal(3)
        target = r_target * d / np.linalg.norm(d)
    else:
        rng.standard_normal(3)  # keep the stream length independent of r_target
        target = np.zeros(3)
    return CameraPose(position, target, np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True, eq=False)
class LightingConfig:
    ambient: float = 0.3
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    light_intensity: float = 0.7
    specular_strength: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "light_dir", _unit(self.light_dir))
        if not 0 <= self.ambient <= 1:
            raise ValueError("ambient must lie in [0, 1]")
        if self.light_intensity < 0 or self.specular_strength < 0:
            raise ValueError("light intensity and specular strength must be >= 0")

    def to_dict(self) -> dict:
        return {
            "ambient": self.ambient,
            "light_dir": self.light_dir.tolist(),
            "light_intensity": self.light_intensity,
            "specular_strength": self.specular_strength,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LightingConfig":
        return cls(d["ambient"], np.array(d["light_dir"]), d["light_intensity"], d["specular_strength"])


def sample_lighting(rng: np.random.Generator) -> LightingConfig:
    elev = rng.uniform(math.radians(20), math.radians(80))
    az = rng.uniform(-math.pi, math.pi)
    d = np.array([math.cos(elev) * math.cos(az), math.cos(elev) * math.sin(az), math.sin(elev)])
    return LightingConfig(
        ambient=float(rng.uniform(0.2, 0.45)),
        light_dir=d,
        light_intensity=float(rng.uniform(0.4, 0.8)),
        specular_strength=float(rng.uniform(0.0, 0.4)),
    )


@dataclass(frozen=True)
class SceneConfig:
    """Scene defaults; lengths other than ``extent`` are in units of ``extent``."""

    grid_n: int = 64
    extent: float = 1.0
    control_grid: int = 4
    amplitude: float = 0.08
    height_scale: float = 0.02
    radius: float = 2.2
    target_radius: float = 0.3
    out_size: int = 512

    def __post_init__(self) -> None:
        if self.grid_n < 2:
            raise ValueError("grid_n must be >= 2")
        if self.control_grid < 2:
            raise ValueError("control_grid must be >= 2")
        if self.amplitude < 0 or self.height_scale < 0:
            raise ValueError("amplitude and height_scale must be >= 0")
        if self.extent <= 0:
            raise ValueError("extent must be positive")


@dataclass(frozen=True, eq=False)
class PlaneScene:
    vertices: np.ndarray  # (n, n, 3), indexed [j, i] with i along u
    uv: np.ndarray  # (n, n, 2)
    material: MaterialSet
    lighting: LightingConfig
    height_scale: float = 0.0
    tps: TpsModel | None = None

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    def faces(self) -> np.ndarray:
        n = self.n
        j, i = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
        a = (j * n + i).ravel()
        b = a + 1
        c = a + n + 1
        d = a + n
        # Counter-clockwise seen from +z.
        return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def plane_grid(n: int, extent: float) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, 1.0, n)
    uu, vv = np.meshgrid(t, t)  # [j, i]
    uv = np.stack([uu, vv], axis=-1)
    verts = np.zeros((n, n, 3))
    verts[..., 0] = (uu - 0.5) * extent
    verts[..., 1] = (vv - 0.5) * extent
    return verts, uv


def build_plane_scene(
    material: MaterialSet,
    config: SceneConfig,
    rng: np.random.Generator,
    lighting: LightingConfig | None = None,
) -> PlaneScene:
    verts, uv = plane_grid(config.grid_n, config.extent)
    a = config.amplitude * config.extent
    c = config.control_grid
    ct = np.linspace(-config.extent / 2, config.extent / 2, c)
    cx, cy = np.meshgrid(ct, ct)
    ctrl = np.column_stack([cx.ravel(), cy.ravel()])
    z_targets = rng.uniform(-a, a, size=len(ctrl))
    model = tps_fit(ctrl, z_targets)
    if a > 0:
        verts[..., 2] = tps_eval(model, verts[..., :2].reshape(-1, 2))[:, 0].reshape(verts.shape[:2])
    if lighting is None:
        lighting = LightingConfig()
    return PlaneScene(verts, uv, material, lighting, config.height_scale * config.extent, model)


@dataclass(frozen=True, eq=False)
class RenderOutput:
    rgb: Image
    mask: Mask
    depth: DepthMap
    raw_depth: np.ndarray  # camera-space Z, +inf where nothing was hit
    depth_range: tuple[float, float]
    pose: CameraPose
    intrinsics: Intrinsics
    uv: np.ndarray  # per-pixel surface UV, NaN outside the mask


def material_uv_to_pixel(uv: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Texel-centre coordinates for ``uv`` on a periodic ``size``-pixel map (row 0 is v = 1)."""
    return uv[..., 0] * size - 0.5, (1.0 - uv[..., 1]) * size - 0.5


def _vertex_frames(verts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-vertex tangent (dP/du), bitangent (dP/dv) and unit normal."""
    du = np.gradient(verts, axis=1)
    dv = np.gradient(verts, axis=0)
    nrm = np.cross(du, dv)
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    return du, dv, nrm


def displaced_vertices(scene: PlaneScene) -> np.ndarray:
    """Grid vertices after height-map displacement along the geometric normal."""
    verts = scene.vertices
    if scene.height_scale == 0:
        return verts.copy()
    _, _, nrm = _vertex_frames(verts)
    size = scene.material.resolution
    px, py = material_uv_to_pixel(scene.uv, size)
    h = sample_bilinear(scene.material.height.data, px, py, mode="wrap")[..., 0]
    return verts + nrm * (h * scene.height_scale)[..., None]


def project(points_cam: np.ndarray, K: Intrinsics) -> np.ndarray:
    p = np.asarray(points_cam, dtype=np.float64)
    return np.stack([K.cx + K.fx * p[..., 0] / p[..., 2], K.cy + K.fy * p[..., 1] / p[..., 2]], axis=-1)


def _raster(screen: np.ndarray, zc: np.ndarray, faces: np.ndarray, w: int, h: int):
    """Z-buffer pass; returns depth, triangle id and screen-space barycentrics per pixel."""
    zbuf = np.full((h, w), np.inf)
    tri = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    near = 1e-6
    eps = 1e-9
    area_total = 0.0
    for t, (ia, ib, ic) in enumerate(faces):
        za, zb, zcv = zc[ia], zc[ib], zc[ic]
        if za <= near or zb <= near or zcv <= near:
            continue
        (xa, ya), (xb, yb), (xc, yc) = screen[ia], screen[ib], screen[ic]
        area = (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)
        if abs(area) < 1e-12:
            continue
        area_total += abs(area)
        x0 = max(int(math.ceil(min(xa, xb, xc) - eps)), 0)
        x1 = min(int(math.floor(max(xa, xb, xc) + eps)), w - 1)
        y0 = max(int(math.ceil(min(ya, yb, yc) - eps)), 0)
        y1 = min(int(math.floor(max(ya, yb, yc) + eps)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64), np.arange(y0, y1 + 1, dtype=np.float64))
        l0 = ((xb - px) * (yc - py) - (xc - px) * (yb - py)) / area
        l1 = ((xc - px) * (ya - py) - (xa - px) * (yc - py)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        if not inside.any():
            continue
        inv_z = l0 / za + l1 / zb + l2 / zcv
        z = 1.0 / inv_z
        sub = zbuf[y0:y1 + 1, x0:x1 + 1]
        win = inside & (z < sub)
        if not win.any():
            continue
        sub[win] = z[win]
        tri[y0:y1 + 1, x0:x1 + 1][win] = t
        bsub = bary[y0:y1 + 1, x0:x1 + 1]
        bsub[win] = np.stack([l0[win], l1[win], l2[win]], axis=-1)
    return zbuf, tri, bary, area_total


def rasterize(scene: PlaneScene, pose: CameraPose, K: Intrinsics, out_w: int, out_h: int) -> RenderOutput:
    verts = displaced_vertices(scene)
    flat = verts.reshape(-1, 3)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    if np.all(pose.position >= lo) and np.all(pose.position <= hi):
        raise CameraInsideGeometryError("camera lies inside the mesh bounding box")

    faces = scene.faces()
    cam = pose.world_to_camera(flat)
    zc = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        screen = project(cam, K)
    zbuf, tri, bary, area = _raster(screen, zc, faces, out_w, out_h)
    if area < 1e-9:
        raise DegenerateProjectionError("mesh projects to zero area")
    hit = tri >= 0
    if not hit.any():
        raise DegenerateProjectionError("mesh is not visible from this camera")

    # Perspective-correct barycentrics from screen-space ones.
    tid = tri[hit]
    idx = faces[tid]
    zv = zc[idx]
    w_ = bary[hit] / zv
    w_ /= w_.sum(axis=1, keepdims=True)

    def interp(attr: np.ndarray) -> np.ndarray:
        a = attr.reshape(-1, attr.shape[-1])[idx]
        return np.einsum("pk,pkc->pc", w_, a)

    du, dv, nrm = _vertex_frames(verts)
    uv = interp(scene.uv)
    pos = interp(verts)
    n_geo = interp(nrm)
    n_geo /= np.linalg.norm(n_geo, axis=1, keepdims=True)
    tan = interp(du)
    tan -= n_geo * np.sum(tan * n_geo, axis=1, keepdims=True)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    bit = np.cross(n_geo, tan)
    # Keep the bitangent on the +v side so a +Y normal tilts toward +v.
    flip = np.sum(bit * interp(dv), axis=1) < 0
    bit[flip] *= -1

    mat = scene.material
    size = mat.resolution
    px, py = material_uv_to_pixel(uv, size)
    albedo = sample_bilinear(mat.albedo.data, px, py, mode="wrap")
    rough = sample_bilinear(mat.roughness.data, px, py, mode="wrap")[:, 0]
    tn = decode_normal(np.clip(sample_bilinear(mat.normal.encoded.data, px, py, mode="wrap"), 0, 1))
    n_s = tan * tn[:, :1] + bit * tn[:, 1:2] + n_geo * tn[:, 2:3]
    n_s /= np.linalg.norm(n_s, axis=1, keepdims=True)

    lt = scene.lighting
    ldir = lt.light_dir
    view = pose.position - pos
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    ndl = np.maximum(n_s @ ldir, 0.0)
    half = view + ldir
    half /= np.maximum(np.linalg.norm(half, axis=1, keepdims=True), 1e-12)
    ndh = np.maximum(np.sum(n_s * half, axis=1), 0.0)
    shininess = 2.0 / (rough**4 + 1e-4) - 2.0
    spec = np.where(ndl > 0, ndh**shininess, 0.0) * lt.specular_strength * lt.light_intensity
    color = lt.ambient * albedo + (lt.light_intensity * ndl)[:, None] * albedo + spec[:, None]

    rgb = np.zeros((out_h, out_w, 3))
    rgb[hit] = np.clip(color, 0.0, 1.0)
    uv_img = np.full((out_h, out_w, 2), np.nan)
    uv_img[hit] = uv
    depth, rng = DepthMap.from_raw(zbuf, hit)
    return RenderOutput(Image(rgb), Mask(hit), depth, zbuf, rng, pose, K, uv_img)
