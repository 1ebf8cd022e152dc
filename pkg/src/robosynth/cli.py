"""Command-line entry points: serve, record, convert, playback."""

from __future__ import annotations

import argparse
import sys


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the live teleoperation server")
    p.add_argument("--scene", required=True)
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--tick-hz", type=float, default=30.0)
    p.add_argument("--record-dir", default=None,
                   help="directory for recording sessions (toggle with R / toggle_record)")
    p.add_argument("--ui-dir", default=None, help="built frontend bundle to serve at /")


def _add_record(sub):
    p = sub.add_parser("record", help="headless scripted recording to a raw log")
    p.add_argument("--scene", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--raw", required=True, help="output raw log path")
    p.add_argument("--tick-hz", type=float, default=30.0)
    p.add_argument("--grace-ticks", type=int, default=30)


def _add_convert(sub):
    p = sub.add_parser("convert", help="raw log -> structured JSON sequence")
    p.add_argument("--raw", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)


def _add_playback(sub):
    p = sub.add_parser("playback", help="replay a sequence and emit the dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip", type=int, default=0)
    p.add_argument("--keep", type=int, default=None)
    p.add_argument(
        "--modes",
        default="rgb,depth,mask,normal,annotations",
        help="comma list from rgb,depth,mask,class_mask,normal,pointcloud,annotations",
    )
    p.add_argument("--depth-scale", type=float, default=0.001)
    p.add_argument("--workers", type=int, default=1)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="robosynth",
        description="headless robot-scene simulator and synthetic ground-truth pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_serve(sub)
    _add_record(sub)
    _add_convert(sub)
    _add_playback(sub)
    args = parser.parse_args(argv)

    if args.command == "serve":
        from .server import serve

        serve(
            scene_path=args.scene,
            port=args.port,
            host=args.host,
            tick_hz=args.tick_hz,
            record_dir=args.record_dir,
            ui_dir=args.ui_dir,
        )
        return 0

    if args.command == "record":
        from .scene import load_scene
        from .sim import load_script, run_script

        scene = load_scene(args.scene)
        script = load_script(args.script)
        sim = run_script(
            scene,
            script,
            raw_path=args.raw,
            scene_ref=args.scene,
            tick_hz=args.tick_hz,
            grace_ticks=args.grace_ticks,
        )
        print(f"ran {sim.tick_count} ticks; raw log: {args.raw}")
        return 0

    if args.command == "convert":
        from .recorder import convert_raw_to_sequence, save_sequence, validate_sequence
        from .scene import load_scene

        scene = load_scene(args.scene)
        seq = convert_raw_to_sequence(args.raw, scene)
        report = validate_sequence(seq)
        if not report.ok:
            for v in report.violations:
                print(f"violation: {v}", file=sys.stderr)
            return 1
        save_sequence(seq, args.out)
        print(f"wrote {len(seq.frames)} frames to {args.out}")
        return 0

    if args.command == "playback":
        from .playback import PlaybackOptions, load_sequence, run_playback
        from .scene import load_scene

        scene = load_scene(args.scene)
        seq = load_sequence(args.sequence, scene)
        opts = PlaybackOptions(
            output_dir=args.out,
            modes={m.strip() for m in args.modes.split(",") if m.strip()},
            skip=args.skip,
            keep=args.keep,
            depth_scale=args.depth_scale,
            workers=args.workers,
        )
        manifest = run_playback(seq, scene, opts)
        print(
            f"rendered {manifest['num_frames']} frames x {len(manifest['cameras'])} cameras "
            f"-> {args.out} ({len(manifest['entries'])} files)"
        )
        for w in manifest["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())
