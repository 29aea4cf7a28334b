"""Command-line front end.

Two subcommands::

    domecal refine --frames DIR --gt-extrinsics FILE --out DIR
                   [--features DIR] [--config FILE] [--gt-intrinsics FILE]
    domecal synth  --out DIR [--seed N] [--cameras N] [--frames N]
                   [--points N] [--noise-* ...]

``refine`` loads one COLMAP-text model per frame plus the known rig
extrinsics, runs the schedule-driven refinement, and writes the refined
per-frame models (``models/frameNNNNN/``), the shared intrinsics
(``global_intrinsics.json``), and the per-iteration trace
(``trace.jsonl``) into the output directory. With ``--gt-intrinsics`` it
also writes ``report.json``/``report.txt`` and prints the comparison
table. ``synth`` writes a self-contained synthetic dataset that
``refine`` can consume directly.

Exit codes: 0 success, 2 invalid inputs or parameters (the structured
error is printed to stderr), 3 numerical failure during optimization.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import DomecalError, InvalidValue, NumericalFailure
from .features import load_patch_store
from .metrics import build_report, render_table, report_to_json
from .pipeline import refine
from .sparse_io import (
    RunConfig,
    bundle_from_rig,
    load_config,
    load_rig,
    read_intrinsics_json,
    write_intrinsics_json,
    write_sparse_model,
)
from .synthetic import NoiseSpec, generate_dome, write_dataset

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domecal",
        description="Camera-array intrinsics refinement from per-frame "
        "sparse reconstructions with known extrinsics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_refine = sub.add_parser(
        "refine", help="refine intrinsics across one or more frame models"
    )
    p_refine.add_argument(
        "--frames",
        required=True,
        help="directory with one COLMAP-text model subdirectory per frame",
    )
    p_refine.add_argument(
        "--gt-extrinsics",
        required=True,
        help="text file with the known per-camera extrinsics",
    )
    p_refine.add_argument(
        "--features", help="directory of dense-feature cost patches (optional)"
    )
    p_refine.add_argument("--config", help="JSON config file (optional)")
    p_refine.add_argument(
        "--gt-intrinsics",
        help="intrinsics JSON to evaluate against (optional; enables the report)",
    )
    p_refine.add_argument(
        "--threads",
        type=int,
        help="worker threads for loading (falls back to DOMECAL_THREADS, "
        "then the config value)",
    )
    p_refine.add_argument("--out", required=True, help="output directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic dome dataset")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--cameras", type=int, default=6)
    p_synth.add_argument("--frames", type=int, default=2)
    p_synth.add_argument("--points", type=int, default=200)
    p_synth.add_argument(
        "--noise-keypoint", type=float, default=0.0,
        help="Gaussian keypoint noise sigma in pixels",
    )
    p_synth.add_argument(
        "--noise-keypoint-bias", type=float, default=0.0,
        help="constant per-camera keypoint offset magnitude in pixels",
    )
    p_synth.add_argument(
        "--noise-focal", type=float, default=0.0,
        help="relative focal-length perturbation of the initial rig",
    )
    p_synth.add_argument(
        "--noise-pp", type=float, default=0.0,
        help="principal-point perturbation of the initial rig in pixels",
    )
    p_synth.add_argument(
        "--noise-rot", type=float, default=0.0,
        help="rotation perturbation of the initial rig in radians",
    )
    p_synth.add_argument(
        "--noise-trans", type=float, default=0.0,
        help="translation perturbation of the initial rig",
    )
    p_synth.add_argument("--out", required=True, help="output directory")
    return parser


def _resolve_threads(args: argparse.Namespace, config: RunConfig) -> int:
    if args.threads is not None:
        threads = args.threads
    elif "DOMECAL_THREADS" in os.environ:
        raw = os.environ["DOMECAL_THREADS"]
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidValue("DOMECAL_THREADS", f"not an integer: {raw!r}") from None
    else:
        return config.threads
    if threads < 1:
        raise InvalidValue("threads", "must be at least 1")
    return threads


def cmd_refine(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    rig = load_rig(args.frames, args.gt_extrinsics, threads=_resolve_threads(args, config))
    store = load_patch_store(args.features) if args.features else None

    refined, trace = refine(rig, config, store)

    out = Path(args.out)
    for frame in refined.frames:
        write_sparse_model(
            bundle_from_rig(refined, frame),
            out / "models" / f"frame{frame.frame_id:05d}",
        )
    write_intrinsics_json(
        list(refined.cameras),
        refined.global_intrinsics,
        out / "global_intrinsics.json",
    )
    (out / "trace.jsonl").write_text(trace.to_json_lines())

    if args.gt_intrinsics:
        gt = read_intrinsics_json(args.gt_intrinsics)
        dims = {c.camera_id: (c.width, c.height) for c in refined.cameras}
        report = build_report(
            [frame.per_camera_intrinsics for frame in refined.frames],
            refined.global_intrinsics,
            gt,
            dims,
            frame_ids=[frame.frame_id for frame in refined.frames],
        )
        (out / "report.json").write_text(report_to_json(report))
        table = render_table(report)
        (out / "report.txt").write_text(table)
        print(table, end="")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    noise = NoiseSpec(
        keypoint_sigma_px=args.noise_keypoint,
        keypoint_bias_px=args.noise_keypoint_bias,
        focal_rel=args.noise_focal,
        pp_abs_px=args.noise_pp,
        rot_rad=args.noise_rot,
        trans=args.noise_trans,
    )
    gt_rig, input_rig, store = generate_dome(
        seed=args.seed,
        n_cameras=args.cameras,
        n_frames=args.frames,
        n_points=args.points,
        noise=noise,
    )
    write_dataset(args.out, gt_rig, input_rig, store)
    total_tracks = sum(len(frame.points) for frame in input_rig.frames)
    print(
        f"wrote {len(input_rig.frames)} frames, {len(input_rig.cameras)} cameras, "
        f"{total_tracks} tracks, {len(store)} patches to {args.out}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "refine":
            return cmd_refine(args)
        return cmd_synth(args)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomecalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
