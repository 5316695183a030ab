"""Command-line interface: train on a reconstructed scene, render a view
from a saved field, and score a field against held-out views.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .camera import CameraFrame
from .errors import ConfigError, SplatError
from .io.colmap import read_colmap_text
from .io.config import build_config, parse_config_file
from .io.images import encode_ppm, load_images
from .io.ply import read_ply, write_ply
from .io.replay import ReplayStream, restrict_bundle
from .losses import psnr
from .pipeline import (
    ABLATIONS,
    phase1_initialize,
    phase2_step,
    phase3_finalize,
)
from .rasterize import render
from .report import render_figures, write_events_tsv, write_metrics

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _resolve_sparse(scene_dir: Path) -> Path:
    if (scene_dir / "cameras.txt").is_file():
        return scene_dir
    if (scene_dir / "sparse" / "cameras.txt").is_file():
        return scene_dir / "sparse"
    raise FileNotFoundError(f"no cameras.txt under {scene_dir}")


def _read_name_list(path: Path) -> list:
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n and not n.startswith("#")]
    if not names:
        raise UsageError(f"{path} lists no image names")
    return names


def _ids_for_names(bundle, names, source) -> list:
    by_name = {f.name: f.image_id for f in bundle.frames.values()}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise UsageError(f"{source} names unknown images: {missing}")
    return [by_name[n] for n in names]


def _parse_ablations(text) -> frozenset:
    if not text:
        return frozenset()
    flags = {t.strip() for t in text.split(",") if t.strip()}
    unknown = flags - ABLATIONS
    if unknown:
        raise UsageError(
            f"unknown ablations {sorted(unknown)}; valid: {sorted(ABLATIONS)}"
        )
    return frozenset(flags)


def _cmd_train(args) -> int:
    cfg = parse_config_file(args.config) if args.config else build_config({})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ablations = _parse_ablations(args.ablate)

    bundle = read_colmap_text(_resolve_sparse(Path(args.scene)))
    load_images(bundle, args.images)
    if args.order:
        names = _read_name_list(Path(args.order))
        bundle = restrict_bundle(bundle, _ids_for_names(bundle, names, args.order))

    out = Path(args.out)
    (out / "figures").mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    stream = ReplayStream(bundle)
    frames, points, matches = stream.initial(cfg.n0)
    state = phase1_initialize(frames, points, cfg, matches=matches, ablations=ablations)
    print(
        f"phase 1: {cfg.initial_iters} iterations over {cfg.n0} images, "
        f"{len(state.field)} gaussians [{state.timings['phase1']:.1f}s]"
    )

    for ev in stream.events():
        rep = phase2_step(state, ev.frame, ev.points, ev.match_row, cfg)
        print(
            f"event {len(state.events)} image {rep.image_id}: "
            f"+{rep.n_inserted} gaussians ({rep.field_after} total), "
            f"psnr {rep.psnr_before:.2f} -> {rep.psnr_after:.2f}, "
            f"loss {rep.loss_first:.4f} -> {rep.loss_last:.4f} [{rep.seconds:.1f}s]"
        )

    summary = phase3_finalize(state, bundle.refined_poses, cfg)
    total = time.perf_counter() - t0
    print(
        f"phase 3: {summary['iterations']} iterations, train psnr "
        f"{summary['train_psnr_before']:.2f} -> {summary['train_psnr_after']:.2f}, "
        f"{summary['field_size']} gaussians [{summary['seconds']:.1f}s]"
    )

    write_ply(state.field, out / "final.ply")
    write_events_tsv(state.events, out / "events.tsv")
    figures = render_figures(state.events, out / "figures")
    write_metrics(
        out / "metrics.txt",
        cfg,
        ablations,
        state.effective_weights,
        extras={
            "events": len(state.events),
            "field_size": summary["field_size"],
            "train_psnr_before": f"{summary['train_psnr_before']:.6g}",
            "train_psnr_after": f"{summary['train_psnr_after']:.6g}",
            "phase1_seconds": f"{state.timings['phase1']:.3f}",
            "phase2_seconds": f"{state.timings['phase2']:.3f}",
            "phase3_seconds": f"{state.timings['phase3']:.3f}",
            "total_seconds": f"{total:.3f}",
        },
    )
    print(f"wrote {out / 'final.ply'}, {out / 'events.tsv'}, "
          f"{out / 'metrics.txt'}, {len(figures)} figures")
    return 0


def _parse_camera_spec(spec) -> CameraFrame:
    parts = [p for p in spec.split(",") if p.strip()]
    if len(parts) != 13:
        raise UsageError(
            "camera spec needs 13 comma-separated values: "
            "W,H,FX,FY,CX,CY,QW,QX,QY,QZ,TX,TY,TZ"
        )
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"bad camera spec: {exc}") from None
    from .field import quat_to_rotmat

    width, height = int(vals[0]), int(vals[1])
    if width < 1 or height < 1:
        raise UsageError("camera spec needs positive integer W,H")
    return CameraFrame(
        image_id=0,
        width=width,
        height=height,
        fx=vals[2],
        fy=vals[3],
        cx=vals[4],
        cy=vals[5],
        rotation=quat_to_rotmat(np.array(vals[6:10])),
        translation=np.array(vals[10:13]),
        name="cli",
    )


def _cmd_render(args) -> int:
    fld = read_ply(args.ply)
    frame = _parse_camera_spec(args.camera)
    image = render(fld, frame).image
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise UsageError("PNG output needs Pillow; use a .ppm path instead")
        data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data).save(out)
    else:
        out.write_bytes(encode_ppm(image))
    print(f"rendered {len(fld)} gaussians at {frame.width}x{frame.height} -> {out}")
    return 0


def _cmd_metrics(args) -> int:
    fld = read_ply(args.ply)
    scene = Path(args.scene)
    sparse = _resolve_sparse(scene)
    bundle = read_colmap_text(sparse)
    images_dir = scene / "images" if (scene / "images").is_dir() else sparse.parent / "images"
    load_images(bundle, images_dir)
    names = _read_name_list(Path(args.holdout))
    ids = _ids_for_names(bundle, names, args.holdout)
    values = []
    for image_id in ids:
        frame = bundle.frames[image_id]
        value = psnr(render(fld, frame).image, frame.pixels)
        values.append(value)
        print(f"{frame.name}\t{value:.4f}")
    print(f"mean\t{float(np.mean(values)):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatstream",
        description="Progressive Gaussian-splatting training on streamed posed images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the three-phase training session")
    train.add_argument("--scene", required=True, help="sparse reconstruction directory")
    train.add_argument("--images", required=True, help="directory with the image files")
    train.add_argument("--order", help="file with one image name per replayed line")
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--ablate", help="comma-separated ablation flags")
    train.add_argument("--seed", type=int, help="override the config seed")
    train.set_defaults(func=_cmd_train)

    rnd = sub.add_parser("render", help="render one view from a saved field")
    rnd.add_argument("--ply", required=True, help="field file written by train")
    rnd.add_argument(
        "--camera", required=True, help="W,H,FX,FY,CX,CY,QW,QX,QY,QZ,TX,TY,TZ"
    )
    rnd.add_argument("--out", required=True, help="output image (.ppm, or .png with Pillow)")
    rnd.set_defaults(func=_cmd_render)

    met = sub.add_parser("metrics", help="score a saved field on held-out views")
    met.add_argument("--ply", required=True, help="field file written by train")
    met.add_argument("--scene", required=True, help="scene root with sparse/ and images/")
    met.add_argument("--holdout", required=True, help="file with one held-out name per line")
    met.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (SplatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
