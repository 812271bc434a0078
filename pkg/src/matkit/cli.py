"""``matkit`` command line: rectify, synth, align, sample, eval, tile-check, sweep.

Exit codes: 0 success, 1 validation error, 2 I/O failure.  Diagnostics are a
single line on stderr.  Relative ``--out`` paths resolve under the output
directory (``--output-dir``, else ``$MATKIT_OUTPUT_DIR``, else the working
directory).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dataset import (
    DatasetConfig,
    aligned_ground_truth,
    generate_dataset,
    read_manifest,
    sample_from_record,
)
from .diffusion import (
    MATERIAL_LAYOUT,
    OracleDenoiser,
    make_schedule,
    periodic_denoiser,
    sample as ddim_sample,
    save_latent,
    stub_decode,
    stub_encode,
    windowed_denoiser,
)
from .imaging import (
    MATERIAL_ATTRIBUTES,
    Image,
    MaterialSet,
    load_depth,
    load_image,
    load_mask,
    load_material_set,
    read_raw,
    save_image,
    save_mask,
    save_material_set,
)
from .materials import procedural_material
from .metrics import SEAMY_THRESHOLD, evaluate_pair, reports_to_csv, seam_ratio
from .rectify import Intrinsics, RectifyParams, default_intrinsics, rectify, sweep_d_shift, sweep_to_csv
from .render import SceneConfig

ENV_OUTPUT_DIR = "MATKIT_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Bad flags or flag combinations."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401 - argparse hook
        raise UsageError(message)


def _bundled_dir() -> Path:
    return Path(str(resources.files("matkit") / "data" / "sample"))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="matkit", description="Material extraction toolkit")
    p.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--output-dir", default=None, help="root for relative --out paths")
    common.add_argument("--threads", type=int, default=1, help="worker count; 1 is the bit-exact reference")
    common.add_argument("--seed", type=_seed, default=0, help="master seed")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("rectify", parents=[common], help="depth-guided rectification of a masked region")
    r.add_argument("--image")
    r.add_argument("--mask")
    r.add_argument("--depth")
    r.add_argument("--bundled", action="store_true", help="use the bundled synthetic sample as input")
    r.add_argument("--out", default="rectified")
    r.add_argument("--d-shift", type=float, default=1.0)
    r.add_argument("--target", type=int, default=1024)
    r.add_argument("--s-sample", type=float, default=0.5)
    r.add_argument("--kernel", type=int, default=5)
    r.add_argument("--normalize", choices=("per-axis", "aspect-preserving"), default="per-axis")
    r.add_argument("--intrinsics", type=_floats, default=None, help="fx,fy,cx,cy (default: from image size)")

    s = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    s.add_argument("--materials", default=None, help="directory of material subdirectories")
    s.add_argument("--procedural", type=int, default=0, help="number of procedural materials when --materials is absent")
    s.add_argument("--material-size", type=int, default=256)
    s.add_argument("--out", default="synth")
    s.add_argument("--views", type=int, default=20)
    s.add_argument("--size", type=int, default=512, help="render resolution")
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--amplitude", type=float, default=0.08)
    s.add_argument("--ambient-only", action="store_true")

    a = sub.add_parser("align", parents=[common], help="write view-aligned ground truth for a dataset")
    a.add_argument("--dataset", required=True, help="directory holding manifest.jsonl")
    a.add_argument("--materials", required=True)
    a.add_argument("--out", default="aligned")
    a.add_argument("--sampling", choices=("nearest", "bilinear"), default="bilinear")

    m = sub.add_parser("sample", parents=[common], help="DDIM sampling with a toy denoiser")
    m.add_argument("--denoiser", choices=("oracle", "conv", "windowed"), default="conv")
    m.add_argument("--steps", type=int, default=50)
    m.add_argument("--rolling", type=_on_off, default=True)
    m.add_argument("--latent", type=int, default=64, help="latent side length")
    m.add_argument("--material", default=None, help="clean material for the oracle denoiser")
    m.add_argument("--upsample", choices=("nearest", "bilinear-wrap"), default="bilinear-wrap")
    m.add_argument("--out", default="sample")

    e = sub.add_parser("eval", parents=[common], help="compare predicted and ground-truth materials")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mode", choices=("search", "fixed"), default="search")
    e.add_argument("--out", default="report.csv")

    t = sub.add_parser("tile-check", parents=[common], help="tile a texture and score its seams")
    t.add_argument("--input", required=True, help="image file or material directory")
    t.add_argument("--tiles", type=int, default=2)
    t.add_argument("--out", default="tile_check")

    w = sub.add_parser("sweep", parents=[common], help="d_shift sensitivity table")
    w.add_argument("--image")
    w.add_argument("--mask")
    w.add_argument("--depth")
    w.add_argument("--bundled", action="store_true")
    w.add_argument("--values", type=_floats, default=[0.1, 0.5, 1.0, 5.0, 25.0, 100.0])
    w.add_argument("--target", type=int, default=1024)
    w.add_argument("--s-sample", type=float, default=0.5)
    w.add_argument("--kernel", type=int, default=5)
    w.add_argument("--normalize", choices=("per-axis", "aspect-preserving"), default="per-axis")
    w.add_argument("--intrinsics", type=_floats, default=None)
    w.add_argument("--out", default="sweep.csv")
    return p


# ---------------------------------------------------------------------------
# helpers


def _output_root(args) -> Path:
    return Path(args.output_dir or os.environ.get(ENV_OUTPUT_DIR) or ".")


def _resolve_out(args) -> Path:
    out = Path(args.out)
    return out if out.is_absolute() else _output_root(args) / out


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "print_config"}
    cfg["output_dir"] = str(_output_root(args))
    return cfg


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _require(args, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"missing required flag --{name.replace('_', '-')}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return p


def _rectify_inputs(args):
    if args.bundled:
        d = _bundled_dir()
        paths = (d / "rgb.png", d / "mask.png", d / "depth.pfm")
    else:
        _require(args, "image", "mask", "depth")
        paths = tuple(_existing(x) for x in (args.image, args.mask, args.depth))
    image = load_image(paths[0], "albedo")
    mask = load_mask(paths[1])
    depth = load_depth(paths[2])
    if args.intrinsics is not None:
        if len(args.intrinsics) != 4:
            raise UsageError("--intrinsics needs four values fx,fy,cx,cy")
        K = Intrinsics(*args.intrinsics)
    else:
        K = default_intrinsics(image.width, image.height)
    K.check_bounds(image.width, image.height)
    return image, mask, depth, K, [p.name for p in paths]


def _params(args, d_shift: float) -> RectifyParams:
    return RectifyParams(
        d_shift=d_shift, target_w=args.target, target_h=args.target,
        s_sample=args.s_sample, hole_kernel=args.kernel, normalize=args.normalize,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_rectify(args) -> int:
    image, mask, depth, K, names = _rectify_inputs(args)
    params = _params(args, args.d_shift)
    tex, valid = rectify(image, mask, depth, K, params)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    save_image(tex, out / "texture.png", bit_depth=8)
    save_mask(valid, out / "mask.png")
    _write_json(out / "rectify.json", {
        "inputs": names,
        "intrinsics": K.as_dict(),
        "params": {
            "d_shift": params.d_shift, "target_w": params.target_w, "target_h": params.target_h,
            "s_sample": params.s_sample, "hole_kernel": params.hole_kernel, "normalize": params.normalize,
            "grid_w": params.grid_w, "grid_h": params.grid_h,
        },
        "seed": args.seed,
        "valid_fraction": float(valid.data.mean()),
    })
    return EXIT_OK


def _load_material_dirs(root: Path) -> tuple[list[str], list[MaterialSet]]:
    root = _existing(str(root))
    if any((root / f"{k}.png").is_file() for k in MATERIAL_ATTRIBUTES):
        return [root.name], [load_material_set(root)]
    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no material directories under {root}")
    return [d.name for d in dirs], [load_material_set(d) for d in dirs]


def cmd_synth(args) -> int:
    if args.views < 1:
        raise UsageError("--views must be >= 1")
    if args.materials:
        ids, mats = _load_material_dirs(Path(args.materials))
    elif args.procedural > 0:
        ss = np.random.SeedSequence([args.seed, 0xA17]).generate_state(args.procedural)
        mats = [procedural_material(int(s), args.material_size) for s in ss]
        ids = [f"proc{i:03d}" for i in range(args.procedural)]
    else:
        raise UsageError("missing required flag --materials (or --procedural N)")
    scene = SceneConfig(grid_n=args.grid, amplitude=args.amplitude, out_size=args.size)
    config = DatasetConfig(views=args.views, master_seed=args.seed, scene=scene, ambient_only=args.ambient_only)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    generate_dataset(mats, config, out, ids)
    if not args.materials:
        for mid, mat in zip(ids, mats):
            save_material_set(mat, out / "materials" / mid)
    _write_json(out / "config.json", {"dataset": config.to_dict(), "materials": ids, "threads": args.threads})
    return EXIT_OK


def cmd_align(args) -> int:
    records = read_manifest(_existing(args.dataset))
    root = _existing(args.materials)
    out = _resolve_out(args)
    cache: dict[str, MaterialSet] = {}
    for rec in records:
        mid = rec["material_id"]
        if mid not in cache:
            cache[mid] = load_material_set(root / mid)
        aligned = aligned_ground_truth(sample_from_record(rec), cache[mid], args.sampling)
        save_material_set(aligned, out / f"{mid}_v{rec['view_index']:02d}")
    _write_json(out / "align.json", {"count": len(records), "sampling": args.sampling, "seed": args.seed})
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.latent < 4:
        raise UsageError("--latent must be >= 4")
    schedule = make_schedule(1000)
    condition = None
    if args.denoiser == "oracle":
        if args.material:
            mat = load_material_set(_existing(args.material))
        else:
            mat = procedural_material(args.seed, args.latent * 8)
        condition = stub_encode(mat)
        if condition.h != args.latent:
            raise UsageError(f"--material resolution gives latent side {condition.h}, not --latent {args.latent}")
        denoiser = OracleDenoiser(schedule)
    elif args.denoiser == "conv":
        denoiser = periodic_denoiser(schedule)
    else:
        denoiser = windowed_denoiser(schedule)
    rng = np.random.default_rng(args.seed)
    z = ddim_sample(denoiser, condition, (16, args.latent, args.latent), args.steps, schedule,
                    args.rolling, rng, MATERIAL_LAYOUT)
    decoded = stub_decode(z, upsample=args.upsample)
    prefix = _resolve_out(args)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    maps = decoded.maps()
    for name in MATERIAL_ATTRIBUTES:
        save_image(maps[name], prefix.with_name(f"{prefix.name}_{name}.png"), bit_depth=16)
    save_latent(z, prefix.with_name(prefix.name + "_latent"))
    seams = {k: seam_ratio(v) for k, v in maps.items()}
    _write_json(prefix.with_name(prefix.name + "_sample.json"), {
        "denoiser": args.denoiser, "steps": args.steps, "rolling": args.rolling,
        "seed": args.seed, "latent": args.latent, "upsample": args.upsample, "seam_ratio": seams,
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_ids, preds = _load_material_dirs(Path(args.pred))
    gt_ids, gts = _load_material_dirs(Path(args.gt))
    gt_by_id = dict(zip(gt_ids, gts))
    reports = {}
    if len(preds) == 1 and len(gts) == 1:
        reports[pred_ids[0]] = evaluate_pair(preds[0], gts[0], args.mode)
    else:
        missing = [p for p in pred_ids if p not in gt_by_id]
        if missing:
            raise UsageError(f"no ground truth for {', '.join(missing)}")
        for pid, pred in zip(pred_ids, preds):
            reports[pid] = evaluate_pair(pred, gt_by_id[pid], args.mode)
    out = _resolve_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(reports_to_csv(reports))
    return EXIT_OK


def _tile(data: np.ndarray, n: int) -> np.ndarray:
    return np.tile(data, (n, n, 1))


def cmd_tile_check(args) -> int:
    if args.tiles < 2:
        raise UsageError("--tiles must be >= 2")
    src = _existing(args.input)
    if src.is_dir():
        maps = load_material_set(src).maps()
    else:
        raw = read_raw(src)
        maps = {src.stem: Image(np.clip(raw, 0.0, 1.0))}
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    report = {"tiles": args.tiles, "threshold": SEAMY_THRESHOLD, "maps": {}}
    for name, img in maps.items():
        save_image(_tile(img.data, args.tiles), out / f"{name}_tiled.png", bit_depth=8)
        r = seam_ratio(img)
        report["maps"][name] = {"seam_ratio": r, "seamy": bool(r > SEAMY_THRESHOLD)}
    _write_json(out / "tile_report.json", report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    image, mask, depth, K, _ = _rectify_inputs(args)
    if not args.values:
        raise UsageError("--values needs at least one number")
    rows = sweep_d_shift(image, mask, depth, K, _params(args, 1.0), args.values)
    out = _resolve_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(sweep_to_csv(rows))
    return EXIT_OK


COMMANDS = {
    "rectify": cmd_rectify,
    "synth": cmd_synth,
    "align": cmd_align,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "tile-check": cmd_tile_check,
    "sweep": cmd_sweep,
}


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.print_config:
            print(json.dumps(_resolved_config(args), sort_keys=True, default=_json_default))
            return EXIT_OK
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"matkit: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"matkit: io error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ZeroDivisionError) as exc:
        print(f"matkit: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
