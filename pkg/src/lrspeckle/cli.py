"""Command-line front end: synth, register, estimate-noise, denoise, evaluate, pipeline.

Every stage writes its artifacts plus a ``provenance.json`` (config snapshot,
SHA-256 of every input file, tool version) into its output directory.
Failures print a single machine-parsable line to stderr::

    error: <ErrorClass>: <message>

and exit with status 1 (I/O or validation) or 2 (command-line usage).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_overrides, load_config, parse_assignment
from .errors import ConfigError, ManifestError, ShapeError, SpeckleError
from .imageio import (
    DatasetManifest,
    RawImage,
    Roi,
    from_log,
    load_manifest,
    read_image,
    save_manifest,
    to_log,
    write_image,
)
from .metrics import evaluate, write_csv
from .noise import estimate_sigma
from .pipeline import frame_average, reconstruct, valid_box
from .registration import register_stack, save_transforms
from .solver import denoise
from .synthetic import SpeckleSpec, phantom, retina_spec, speckle_stack
from .volume import LogVolume, SigmaMap


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_provenance(out: Path, command: str, config: RunConfig, inputs, outputs) -> None:
    record = {
        "tool": "lrspeckle",
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        # paths relative to the output directory keep the record relocatable
        "inputs": {os.path.relpath(p, out): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    _json_dump(record, out / "provenance.json")


# ---------------------------------------------------------------- artifacts

def _save_volume(path: Path, vol: LogVolume, **extra) -> None:
    np.savez(path, data=vol.data, rows=vol.rows, cols=vol.cols, **extra)


def _load_npz(path: Path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


def _load_volume(path: Path, cls=LogVolume):
    z = _load_npz(path)
    try:
        vol = cls(z["data"], int(z["rows"]), int(z["cols"]))
    except KeyError as exc:
        raise ShapeError(f"{path}: missing array {exc}") from exc
    return vol, z


def _write_scaled(out: Path, stem: str, grid: np.ndarray, fmt: str) -> str:
    """Store a real-valued map as 16-bit pixels with an affine JSON sidecar.

    ``value = offset + scale * pixel``.
    """
    lo, hi = float(grid.min()), float(grid.max())
    offset = min(lo, 0.0)
    scale = (hi - offset) / 65535.0 if hi > offset else 1.0
    px = np.clip(np.rint((grid - offset) / scale), 0, 65535)
    name = f"{stem}.{fmt}"
    write_image(RawImage(px, 16), out / name, fmt)
    _json_dump({"image": name, "offset": offset, "scale": scale,
                "note": "value = offset + scale * pixel"}, out / f"{stem}.json")
    return name


def _select_frames(manifest: DatasetManifest, config: RunConfig):
    paths = manifest.frames[: config.frames]
    images = [read_image(p) for p in paths]
    depth, shape = images[0].bit_depth, images[0].pixels.shape
    for p, img in zip(paths, images):
        if img.bit_depth != depth or img.pixels.shape != shape:
            raise ShapeError(f"{p}: frames must share size and bit depth")
    return paths, images


def _synth_rois(size: int) -> list[Roi]:
    q = size // 4
    return [Roi("layers", q, size // 8, 2 * q, q), Roi("lesions", q // 2, size // 2, 2 * q, q)]


# ---------------------------------------------------------------- stages

def stage_synth(config: RunConfig, out: Path) -> Path:
    sc = config.synth
    big = sc.size + 2 * sc.margin
    truth_big = phantom(replace(retina_spec(big, big), bit_depth=sc.bit_depth))
    crop = slice(sc.margin, sc.margin + sc.size)
    truth = RawImage(truth_big.pixels[crop, crop], sc.bit_depth)
    ref_index = config.reference_index if config.reference_index is not None else sc.frames // 2
    stack = speckle_stack(truth_big, SpeckleSpec(
        frames=sc.frames, looks=sc.looks, max_translation=sc.max_translation,
        max_rotation=sc.max_rotation, seed=sc.seed, reference_index=ref_index,
        margin=sc.margin,
    ))
    out.mkdir(parents=True, exist_ok=True)
    fmt = config.image_format
    names = []
    for j, frame in enumerate(stack.frames):
        name = f"frame_{j:02d}.{fmt}"
        write_image(frame, out / name, fmt)
        names.append(name)
    write_image(truth, out / f"truth.{fmt}", fmt)
    manifest = DatasetManifest([out / n for n in names], out / f"truth.{fmt}", _synth_rois(sc.size))
    save_manifest(manifest, out / "manifest.json")
    save_transforms(stack.transforms, out / "transforms_true.json")
    sigma_name = _write_scaled(out, "sigma_true", np.full(truth.pixels.shape, stack.sigma), "pgm")
    outputs = names + [f"truth.{fmt}", "manifest.json", "transforms_true.json",
                       sigma_name, "sigma_true.json"]
    _write_provenance(out, "synth", config, [], outputs)
    return out / "manifest.json"


def stage_register(config: RunConfig, manifest_path: Path, out: Path):
    manifest = load_manifest(manifest_path)
    paths, images = _select_frames(manifest, config)
    ref = config.reference_index if config.reference_index is not None else len(images) // 2
    transforms, vol, mask = register_stack(
        [to_log(img) for img in images], ref, config.registration
    )
    out.mkdir(parents=True, exist_ok=True)
    save_transforms(transforms, out / "transforms.json")
    _save_volume(out / "registered.npz", vol, mask=mask, bit_depth=images[0].bit_depth,
                 reference_index=ref)
    outputs = ["transforms.json", "registered.npz"]
    for j in range(vol.frames):
        name = f"registered_{j:02d}.{config.image_format}"
        write_image(from_log(vol.frame(j), images[0].bit_depth), out / name, config.image_format)
        outputs.append(name)
    _write_provenance(out, "register", config, [manifest_path, *paths], outputs)
    return out / "registered.npz"


def stage_estimate(config: RunConfig, registered: Path, out: Path):
    vol, z = _load_volume(registered)
    mask = z.get("mask")
    sigma = estimate_sigma(vol, mask, config.noise)
    out.mkdir(parents=True, exist_ok=True)
    _save_volume(out / "sigma.npz", sigma)
    outputs = ["sigma.npz"]
    for j in range(sigma.frames):
        name = _write_scaled(out, f"sigma_{j:02d}", sigma.frame(j), "pgm")
        outputs += [name, f"sigma_{j:02d}.json"]
    _write_provenance(out, "estimate-noise", config, [registered], outputs)
    return out / "sigma.npz"


def stage_denoise(config: RunConfig, registered: Path, sigma_path: Path, out: Path):
    vol, z = _load_volume(registered)
    sigma, _ = _load_volume(sigma_path, SigmaMap)
    bit_depth = int(z.get("bit_depth", 8))
    if config.frames < vol.frames:
        vol = vol.with_data(vol.data[:, : config.frames])
        sigma = SigmaMap(sigma.data[:, : config.frames], sigma.rows, sigma.cols)
    L, N, report = denoise(vol, sigma, config.solver)
    out.mkdir(parents=True, exist_ok=True)
    fmt = config.image_format
    write_image(reconstruct(L, sigma, bit_depth, config.bias_correction), out / f"denoised.{fmt}", fmt)
    _save_volume(out / "L.npz", L)
    _save_volume(out / "N.npz", N)
    outputs = [f"denoised.{fmt}", "L.npz", "N.npz", "solve_report.json", "timing.json"]
    for j in range(L.frames):
        name = f"L_{j:02d}.{fmt}"
        write_image(from_log(L.frame(j), bit_depth), out / name, fmt)
        outputs.append(name)
        outputs += [_write_scaled(out, f"N_{j:02d}", N.frame(j), "pgm"), f"N_{j:02d}.json"]
    # wall time varies run to run, so it lives outside the deterministic report
    report_dict = report.to_dict()
    _json_dump({"solver_wall_time_s": report_dict.pop("wall_time")}, out / "timing.json")
    _json_dump(report_dict, out / "solve_report.json")
    _write_provenance(out, "denoise", config, [registered, sigma_path], outputs)
    return out / f"denoised.{fmt}", L, sigma


def stage_evaluate(config: RunConfig, images: list[Path], reference: Path | None,
                   manifest_path: Path | None, registered: Path | None, out_csv: Path):
    rois: list[Roi] = []
    inputs = list(images)
    if manifest_path is not None:
        manifest = load_manifest(manifest_path)
        rois = list(manifest.rois)
        reference = reference or manifest.reference
        inputs.append(manifest_path)
    if reference is None:
        raise ManifestError("evaluation needs a reference image (--reference or a manifest with one)")
    ref = read_image(reference)
    inputs.append(reference)
    if registered is not None:
        z = _load_npz(registered)
        if "mask" in z:
            rois = [valid_box(z["mask"])] + rois
        inputs.append(registered)
    rows = []
    for path in images:
        for rep in evaluate(read_image(path), ref, rois):
            rows.append((Path(path).stem, rep))
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_csv)
    _write_provenance(out_csv.parent, "evaluate", config, inputs, [out_csv.name])
    return rows


def stage_pipeline(config: RunConfig, manifest_path: Path | None, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    if manifest_path is None:
        manifest_path = stage_synth(config, out / "data")
    registered = stage_register(config, manifest_path, out / "register")
    sigma_path = stage_estimate(config, registered, out / "noise")
    denoised, _, _ = stage_denoise(config, registered, sigma_path, out / "denoise")
    vol, z = _load_volume(registered)
    bit_depth = int(z["bit_depth"])
    fmt = config.image_format
    baselines = out / "baselines"
    baselines.mkdir(exist_ok=True)
    write_image(frame_average(vol, bit_depth), baselines / f"average.{fmt}", fmt)
    ref_frame = load_manifest(manifest_path).frames[int(z["reference_index"])]
    write_image(read_image(ref_frame), baselines / f"single.{fmt}", fmt)
    images = [denoised, baselines / f"average.{fmt}", baselines / f"single.{fmt}"]
    manifest = load_manifest(manifest_path)
    if manifest.reference is None:
        return None
    return stage_evaluate(config, images, None, manifest_path, registered,
                          out / "evaluate" / "metrics.csv")


# ---------------------------------------------------------------- argument handling

def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config field, e.g. --set solver.lam=0.1")
    common.add_argument("--frames", type=int,
                        help="number of leading frames to use (default 8)")
    common.add_argument("--format", dest="image_format", choices=("pgm", "png"),
                        help="image format for written images")
    common.add_argument("--out", type=Path, required=True, help="output directory")

    parser = _Parser(prog="lrspeckle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lrspeckle {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fixture dataset")
    p.add_argument("--seed", type=int, help="random seed for jitter and speckle")
    p.add_argument("--size", type=int, help="frame side length in pixels")

    p = sub.add_parser("register", parents=[common], help="register frames to a reference")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("estimate-noise", parents=[common], help="estimate the log-domain noise map")
    p.add_argument("--registered", type=Path, required=True, help="registered.npz from 'register'")

    p = sub.add_parser("denoise", parents=[common], help="run the low-rank solver")
    p.add_argument("--registered", type=Path, required=True)
    p.add_argument("--sigma", type=Path, required=True, help="sigma.npz from 'estimate-noise'")
    p.add_argument("--lam", type=float, help="gradient sparsity weight")
    p.add_argument("--multiplier-step-mode", choices=("paper-literal", "standard"))
    p.add_argument("--max-iters", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="write a metrics CSV")
    p.add_argument("--image", type=Path, action="append", required=True,
                   help="image to score (repeatable)")
    p.add_argument("--reference", type=Path)
    p.add_argument("--manifest", type=Path, help="supplies reference and ROIs")
    p.add_argument("--registered", type=Path, help="adds the jointly valid region")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path)
    src.add_argument("--synth", action="store_true", help="generate a fixture first")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--multiplier-step-mode", choices=("paper-literal", "standard"))
    p.add_argument("--max-iters", type=int)
    return parser


_FLAG_FIELDS = {
    "frames": "frames",
    "image_format": "image_format",
    "seed": "synth.seed",
    "size": "synth.size",
    "lam": "solver.lam",
    "multiplier_step_mode": "solver.multiplier_step_mode",
    "max_iters": "solver.max_iters",
}


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = dict(parse_assignment(text) for text in args.overrides)
    for attr, dotted in _FLAG_FIELDS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if args.command == "synth" and args.frames is not None:
        overrides["synth.frames"] = args.frames
    return apply_overrides(config, overrides) if overrides else config


def _dispatch(args, config: RunConfig) -> None:
    cmd = args.command
    if cmd == "synth":
        stage_synth(config, args.out)
    elif cmd == "register":
        stage_register(config, args.manifest, args.out)
    elif cmd == "estimate-noise":
        stage_estimate(config, args.registered, args.out)
    elif cmd == "denoise":
        stage_denoise(config, args.registered, args.sigma, args.out)
    elif cmd == "evaluate":
        stage_evaluate(config, args.image, args.reference, args.manifest, args.registered,
                       args.out / "metrics.csv")
    elif cmd == "pipeline":
        stage_pipeline(config, None if args.synth else args.manifest, args.out)


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    """Entry point; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        config = _resolve_config(args)
        _dispatch(args, config)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), 1)
    except (SpeckleError, OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
