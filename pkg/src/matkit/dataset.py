"""Synthetic dataset generation: scenes, renders, alignment angles and the manifest.

Every sample derives its own RNG streams from ``(master_seed, material
index, view index)`` so output does not depend on processing order.
"""
from __future__ import annotations

import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import MaterialSet, rotate_material_set, save_image, save_mask
from .rectify import default_intrinsics
from .render import (
    CameraPose,
    LightingConfig,
    RenderOutput,
    SceneConfig,
    build_plane_scene,
    rasterize,
    sample_camera,
    sample_lighting,
    view_azimuth,
)

MANIFEST_NAME = "manifest.jsonl"
ROTATION_CONVENTION = (
    "alpha = atan2(v_y, v_x) of the view vector; aligned ground truth = material rotated "
    "counter-clockwise (as displayed) by -alpha; the rendered image then shows the aligned "
    "ground truth turned a further +pi/2 for every view"
)

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "matkit dataset manifest record",
    "type": "object",
    "required": [
        "material_id", "view_index", "files", "intrinsics", "pose", "alpha",
        "seeds", "lighting", "raw_depth_range", "image_size", "rotation_convention",
    ],
    "additionalProperties": False,
    "properties": {
        "material_id": {"type": "string"},
        "view_index": {"type": "integer", "minimum": 0},
        "files": {
            "type": "object",
            "required": ["rgb", "mask", "depth"],
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in ("rgb", "mask", "depth")},
        },
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy"],
            "properties": {k: {"type": "number"} for k in ("fx", "fy", "cx", "cy")},
        },
        "pose": {
            "type": "object",
            "required": ["position", "target", "up"],
            "properties": {
                k: {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
                for k in ("position", "target", "up")
            },
        },
        "alpha": {"type": "number", "minimum": -math.pi, "maximum": math.pi},
        "seeds": {
            "type": "object",
            "required": ["master", "tps", "camera", "lighting"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("master", "tps", "camera", "lighting")},
        },
        "lighting": {
            "type": "object",
            "required": ["ambient", "light_dir", "light_intensity", "specular_strength"],
        },
        "raw_depth_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "image_size": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "rotation_convention": {"type": "string"},
    },
}


@dataclass(frozen=True)
class DatasetConfig:
    views: int = 20
    master_seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    ambient_only: bool = False

    def __post_init__(self) -> None:
        if self.views < 1:
            raise ValueError("views must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SampleSeeds:
    master: int
    tps: int
    camera: int
    lighting: int


@dataclass(frozen=True, eq=False)
class DatasetSample:
    material_id: str
    view_index: int
    alpha: float
    pose: CameraPose
    seeds: SampleSeeds
    files: dict[str, str]
    record: dict


def sample_seeds(master_seed: int, material_index: int, view_index: int) -> SampleSeeds:
    tps, cam, light = np.random.SeedSequence([master_seed, material_index, view_index]).generate_state(3)
    return SampleSeeds(int(master_seed), int(tps), int(cam), int(light))


def render_sample(
    material: MaterialSet, config: DatasetConfig, seeds: SampleSeeds
) -> tuple[RenderOutput, LightingConfig, float]:
    """Build, light and render one view; returns the render, its lighting and alpha."""
    sc = config.scene
    if config.ambient_only:
        lighting = LightingConfig(ambient=1.0, light_intensity=0.0, specular_strength=0.0)
    else:
        lighting = sample_lighting(np.random.default_rng(seeds.lighting))
    scene = build_plane_scene(material, sc, np.random.default_rng(seeds.tps), lighting)
    pose = sample_camera(
        np.random.default_rng(seeds.camera), sc.radius * sc.extent, sc.target_radius * sc.extent
    )
    K = default_intrinsics(sc.out_size, sc.out_size)
    out = rasterize(scene, pose, K, sc.out_size, sc.out_size)
    return out, lighting, view_azimuth(pose)


def _record(material_id, view, files, out: RenderOutput, lighting, alpha, seeds: SampleSeeds) -> dict:
    return {
        "material_id": material_id,
        "view_index": view,
        "files": files,
        "intrinsics": out.intrinsics.as_dict(),
        "pose": out.pose.to_dict(),
        "alpha": alpha,
        "seeds": asdict(seeds),
        "lighting": lighting.to_dict(),
        "raw_depth_range": [float(out.depth_range[0]), float(out.depth_range[1])],
        "image_size": [out.rgb.width, out.rgb.height],
        "rotation_convention": ROTATION_CONVENTION,
    }


def write_sample(out: RenderOutput, directory: Path) -> dict[str, str]:
    directory.mkdir(parents=True, exist_ok=True)
    save_image(out.rgb, directory / "rgb.png", bit_depth=8)
    save_mask(out.mask, directory / "mask.png")
    save_image(out.depth.data, directory / "depth.pfm")
    return {"rgb": "rgb.png", "mask": "mask.png", "depth": "depth.pfm"}


def sample_dir_name(material_id: str, view: int) -> str:
    return f"{material_id}_v{view:02d}"


def generate_dataset(
    materials: Sequence[MaterialSet],
    config: DatasetConfig,
    out_dir: str | Path,
    material_ids: Sequence[str] | None = None,
) -> list[DatasetSample]:
    """Render ``len(materials) x config.views`` samples and write ``manifest.jsonl``.

    A sample that fails midway has its directory removed before the error
    propagates, so the output tree never holds partial samples.
    """
    if not materials:
        raise ValueError("need at least one material")
    ids = list(material_ids) if material_ids is not None else [f"mat{i:03d}" for i in range(len(materials))]
    if len(ids) != len(materials) or len(set(ids)) != len(ids):
        raise ValueError("material ids must be unique, one per material")
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    samples: list[DatasetSample] = []
    lines = []
    for mi, (mid, mat) in enumerate(zip(ids, materials)):
        for view in range(config.views):
            seeds = sample_seeds(config.master_seed, mi, view)
            rel = Path("samples") / sample_dir_name(mid, view)
            target = out_dir / rel
            try:
                out, lighting, alpha = render_sample(mat, config, seeds)
                names = write_sample(out, target)
            except BaseException:
                shutil.rmtree(target, ignore_errors=True)
                raise
            files = {k: (rel / v).as_posix() for k, v in names.items()}
            rec = _record(mid, view, files, out, lighting, alpha, seeds)
            lines.append(json.dumps(rec, sort_keys=True))
            samples.append(DatasetSample(mid, view, alpha, out.pose, seeds, files, rec))
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return samples


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def sample_from_record(rec: dict) -> DatasetSample:
    s = rec["seeds"]
    return DatasetSample(
        rec["material_id"], rec["view_index"], rec["alpha"], CameraPose.from_dict(rec["pose"]),
        SampleSeeds(s["master"], s["tps"], s["camera"], s["lighting"]), rec["files"], rec,
    )


def aligned_ground_truth(sample: DatasetSample | float, material: MaterialSet, sampling: str = "bilinear") -> MaterialSet:
    """Rotate ``material`` into the sample's view-aligned frame (by ``-alpha``, see ``ROTATION_CONVENTION``)."""
    alpha = sample.alpha if isinstance(sample, DatasetSample) else float(sample)
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    return rotate_material_set(material, -alpha, sampling)

