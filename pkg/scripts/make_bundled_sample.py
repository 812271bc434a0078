"""Regenerate the small synthetic sample shipped with the package."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from matkit.imaging import save_image, save_mask
from matkit.materials import procedural_material
from matkit.rectify import default_intrinsics, metric_d_shift
from matkit.render import CameraPose, LightingConfig, SceneConfig, build_plane_scene, rasterize

OUT = Path(__file__).resolve().parents[1] / "src" / "matkit" / "data" / "sample"
SIZE = 256


def main() -> None:
    mat = procedural_material(11, 256)
    config = SceneConfig(grid_n=48, amplitude=0.0, out_size=SIZE)
    scene = build_plane_scene(mat, config, np.random.default_rng(0), LightingConfig(ambient=1.0, light_intensity=0.0, specular_strength=0.0))
    pose = CameraPose(np.array([1.3, -0.9, 1.4]), np.array([0.05, 0.0, 0.0]))
    K = default_intrinsics(SIZE, SIZE)
    out = rasterize(scene, pose, K, SIZE, SIZE)
    OUT.mkdir(parents=True, exist_ok=True)
    save_image(out.rgb, OUT / "rgb.png")
    save_mask(out.mask, OUT / "mask.png")
    save_image(out.depth.data, OUT / "depth.pfm")
    lo, hi = out.depth_range
    meta = {
        "material_seed": 11,
        "pose": pose.to_dict(),
        "intrinsics": K.as_dict(),
        "raw_depth_range": [lo, hi],
        "metric_d_shift": metric_d_shift(lo, hi),
    }
    (OUT / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


if __name__ == "__main__":
    main()
