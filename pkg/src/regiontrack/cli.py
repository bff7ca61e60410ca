"""Command-line entry points: sequence generation, tracking, diagnostics.

Exit codes: 0 success, 1 metric/diagnostic failure, 2 input error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluate, synth, tracker
from .errors import RegionTrackError, SequenceFormat
from .geometry import CameraIntrinsics, MeshPair, load_obj
from .optimizer import OptimizationSettings

EXIT_OK = 0
EXIT_METRIC = 1
EXIT_INPUT = 2


def _parse_resolution(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"resolution must look like 320x256: {text}") from exc


def _default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    # desk-scale default: ~55 deg horizontal field of view
    f = 0.875 * width
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)


def cmd_synth(args) -> int:
    if args.mesh is not None and not os.path.exists(args.mesh):
        print(f"error: mesh path does not exist: {args.mesh}", file=sys.stderr)
        return EXIT_INPUT
    width, height = args.resolution
    k = _default_intrinsics(width, height)
    try:
        if args.mesh is not None:
            mesh = load_obj(args.mesh)
            rng = np.random.default_rng(args.seed)
            colors = 0.25 + 0.6 * rng.random((mesh.num_vertices, 3))
            colored = synth.ColoredMesh(mesh, colors)
        else:
            colored = synth.make_two_tone_cube()
        if args.background is not None:
            if not os.path.exists(args.background):
                print(f"error: background path does not exist: {args.background}",
                      file=sys.stderr)
                return EXIT_INPUT
            from PIL import Image

            bg = np.asarray(Image.open(args.background).convert("RGB"))
            if bg.shape != (height, width, 3):
                print(f"error: background is {bg.shape[1]}x{bg.shape[0]}, "
                      f"need {width}x{height}", file=sys.stderr)
                return EXIT_INPUT
            backgrounds = [bg]
        else:
            backgrounds = [synth.make_textured_background(width, height, seed=args.seed)]
        variant = synth.make_variant(args.variant, args.frames)
        trajectory = synth.default_trajectory(args.frames, seed=args.seed)
        out = synth.generate_sequence(colored, trajectory, variant, backgrounds, k,
                                      args.frames, args.out, seed=args.seed)
    except (RegionTrackError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {args.frames} frames ({args.variant}) to {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    try:
        seq = evaluate.load_sequence(args.seq)
    except SequenceFormat as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mesh_path = args.mesh if args.mesh is not None else seq.mesh_path
    if not os.path.exists(mesh_path):
        print(f"error: mesh path does not exist: {mesh_path}", file=sys.stderr)
        return EXIT_INPUT
    try:
        settings = (OptimizationSettings.from_file(args.settings)
                    if args.settings else OptimizationSettings())
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        mesh = load_obj(mesh_path)
        pairs = [MeshPair.from_mesh(mesh, seed=args.seed)]
        for _ in range(1, seq.num_objects):
            pairs.append(MeshPair.from_mesh(mesh, seed=args.seed))
        if seq.num_objects > 1 and args.occluder_mesh:
            occ = load_obj(args.occluder_mesh)
            pairs[1] = MeshPair.from_mesh(occ, seed=args.seed)
        state = tracker.make_tracker(pairs, settings, seq.intrinsics, seed=args.seed)
        protocol = evaluate.rbot_protocol if args.protocol == "rbot" else evaluate.opt_protocol
        reports = protocol(state, seq)
    except (RegionTrackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    evaluate.write_report_json(args.out, reports, extra={
        "sequence": str(args.seq), "protocol": args.protocol, "seed": args.seed})
    if args.csv:
        evaluate.write_errors_csv(args.csv, reports)
    if args.overlay:
        os.makedirs(args.overlay, exist_ok=True)
        _write_overlays(args.overlay, seq, pairs, settings, args.seed)
    for rep in reports:
        print(f"object {rep.object_index + 1}: success_rate={rep.success_rate:.2f}% "
              f"auc={rep.auc_score:.3f} resets={rep.resets}")
    print(f"report written to {args.out}")
    return EXIT_OK


def _write_overlays(out_dir, seq, pairs, settings, seed) -> None:
    """Re-run the tracker, writing one contour overlay per evaluated frame."""
    from PIL import Image

    state = tracker.make_tracker(pairs, settings, seq.intrinsics, seed=seed)
    tracker.initialize(state, seq.frame(0), seq.poses[0])
    meshes = [p.full for p in pairs]
    for f in range(1, seq.num_frames):
        frame = seq.frame(f)
        tracker.step(state, frame)
        poses = [o.pose for o in state.objects]
        overlay = evaluate.draw_overlay(frame, meshes, poses, seq.intrinsics)
        Image.fromarray(overlay, mode="RGB").save(os.path.join(out_dir, f"{f:06d}.png"))


def cmd_check_jacobian(args) -> int:
    from .diagnostics import jacobian_stats

    stats = jacobian_stats(seed=args.seed, sign_flip=args.inject_sign_flip)
    print(f"jacobian check: pixels={stats['pixels']} median={stats['median']:.3e} "
          f"p99={stats['p99']:.3e} max={stats['max']:.3e}")
    if stats["median"] >= 1e-3:
        print("FAIL: median relative error above 1e-3", file=sys.stderr)
        return EXIT_METRIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regiontrack",
                                     description="Region-based 6DOF object pose tracking")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a semi-synthetic sequence")
    p_synth.add_argument("--out", required=True, help="output sequence directory")
    p_synth.add_argument("--mesh", help="OBJ mesh (default: built-in two-tone cube)")
    p_synth.add_argument("--background", help="background image (default: procedural)")
    p_synth.add_argument("--frames", type=int, default=100)
    p_synth.add_argument("--resolution", type=_parse_resolution, default=(320, 256))
    p_synth.add_argument("--variant", choices=["regular", "dynlight", "noisy", "occlusion"],
                         default="regular")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_track = sub.add_parser("track", help="track a sequence and score it")
    p_track.add_argument("--seq", required=True, help="sequence directory")
    p_track.add_argument("--mesh", help="OBJ mesh (default: <seq>/mesh.obj)")
    p_track.add_argument("--occluder-mesh", help="OBJ mesh of the second object")
    p_track.add_argument("--out", default="report.json", help="JSON report path")
    p_track.add_argument("--csv", help="optional per-frame error CSV path")
    p_track.add_argument("--overlay", help="directory for contour overlay PNGs")
    p_track.add_argument("--protocol", choices=["rbot", "auc"], default="rbot")
    p_track.add_argument("--settings", help="key=value settings file")
    p_track.add_argument("--seed", type=int, default=0)
    p_track.set_defaults(func=cmd_track)

    p_check = sub.add_parser("check-jacobian", help="finite-difference Jacobian check")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--inject-sign-flip", action="store_true",
                         help="negate the analytic rows (self-test of the check)")
    p_check.set_defaults(func=cmd_check_jacobian)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
