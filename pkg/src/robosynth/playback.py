"""Offline playback: re-pose the scene from a sequence and emit the dataset.

Physics and interaction logic are disabled here; every pose comes verbatim
from the record (recorded camera poses are authoritative, including
socket-attached ones). Frames are independent, so they may be rendered by
a worker pool; outputs are staged per file and moved into place, and the
manifest is assembled after all workers finish, sorted by frame then
camera, so the output tree is byte-identical for any worker count.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from .imgio import write_png, write_ply
from .recorder import (
    FrameRecord,
    RecorderError,
    Sequence,
    load_sequence_file,
    validate_sequence,
)
from .render import (
    ALL_MODES,
    RenderedViews,
    annotations_for_frame,
    assemble_geometry,
    depth_to_pointcloud,
    render_view,
)
from .scene import Scene
from .transforms import Pose


class PlaybackError(RuntimeError):
    pass


@dataclass
class PlaybackOptions:
    output_dir: str
    modes: set[str] = field(default_factory=lambda: {"rgb", "depth", "mask", "annotations"})
    skip: int = 0
    keep: int | None = None     # None = all
    depth_scale: float = 0.001  # meters per encoded unit
    workers: int = 1

    def __post_init__(self):
        self.modes = set(self.modes)
        if not self.modes:
            raise PlaybackError("at least one output mode required")
        unknown = self.modes - set(ALL_MODES)
        if unknown:
            raise PlaybackError(f"unknown modes: {sorted(unknown)}")
        if self.skip < 0:
            raise PlaybackError("skip must be >= 0")
        if self.keep is not None and self.keep <= 0:
            raise PlaybackError("keep must be positive (or omitted for all)")


@dataclass
class PosedScene:
    """Scene geometry posed by one frame record; read-only during rendering."""

    frame: FrameRecord
    object_poses: dict[str, Pose]
    joint_poses: dict[str, Pose]
    camera_poses: dict[str, Pose]


def load_sequence(path: str, scene: Scene | None = None) -> Sequence:
    """Load a sequence file, validate it, and cross-check it against a scene."""
    seq = load_sequence_file(path)
    if not seq.frames:
        raise PlaybackError("empty sequence")
    report = validate_sequence(seq)
    if not report.ok:
        raise PlaybackError(
            "sequence fails validation: " + "; ".join(report.violations[:5])
        )
    if scene is not None:
        check_sequence_against_scene(seq, scene)
    return seq


def check_sequence_against_scene(seq: Sequence, scene: Scene) -> None:
    cams = set(scene.camera_names())
    if set(seq.meta.cameras) - cams:
        missing = sorted(set(seq.meta.cameras) - cams)
        raise PlaybackError(f"sequence cameras absent from scene: {missing}")
    objs = {o.name for o in scene.objects}
    seq_objs = {o["name"] for o in seq.meta.objects}
    if seq_objs - objs:
        raise PlaybackError(f"sequence objects absent from scene: {sorted(seq_objs - objs)}")
    joints = set(scene.robot.skeleton.joint_names())
    if set(seq.meta.joints) - joints:
        raise PlaybackError(
            f"sequence joints absent from scene robot: {sorted(set(seq.meta.joints) - joints)}"
        )


def select_frames(seq: Sequence, skip: int = 0, keep: int | None = None) -> list[FrameRecord]:
    """Frames [skip, skip+keep); keep=None means to the end. May be empty."""
    if skip < 0:
        raise PlaybackError("skip must be >= 0")
    end = None if keep is None else skip + keep
    return seq.frames[skip:end]


def apply_frame(scene: Scene, frame: FrameRecord) -> PosedScene:
    """Pose the scene exactly as recorded; nothing is simulated or re-derived."""
    for o in scene.objects:
        if o.name not in frame.object_poses:
            raise PlaybackError(f"frame {frame.frame_id}: object {o.name!r} missing")
    for j in scene.robot.skeleton.joint_names():
        if j not in frame.joint_poses:
            raise PlaybackError(f"frame {frame.frame_id}: joint {j!r} missing")
    for c in scene.camera_names():
        if c not in frame.camera_poses:
            raise PlaybackError(f"frame {frame.frame_id}: camera {c!r} missing")
    return PosedScene(
        frame=frame,
        object_poses={n: p.to_pose() for n, p in frame.object_poses.items()},
        joint_poses={n: p.to_pose() for n, p in frame.joint_poses.items()},
        camera_poses={n: p.to_pose() for n, p in frame.camera_poses.items()},
    )


def _staged_write(path: str, writer) -> None:
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


_IMAGE_MODE_ATTRS = {
    "rgb": "rgb",
    "depth": "depth",
    "mask": "instance_mask",
    "class_mask": "class_mask",
    "normal": "normal",
}


def render_frame_outputs(
    scene: Scene, frame: FrameRecord, index: int, opts: PlaybackOptions
) -> list[dict]:
    """Render one selected frame for every camera; returns manifest entries."""
    posed = apply_frame(scene, frame)
    geom = assemble_geometry(scene, posed.object_poses, posed.joint_poses)
    out = opts.output_dir
    stem = f"{index:06d}"
    entries: list[dict] = []
    views_by_cam: dict[str, RenderedViews] = {}
    for cam in scene.cameras:
        cam_pose = posed.camera_poses[cam.name]
        try:
            views = render_view(geom, scene, cam, cam_pose, opts.modes, opts.depth_scale)
        except Exception as e:
            raise PlaybackError(
                f"render failed at frame {frame.frame_id} camera {cam.name!r}: {e}"
            ) from e
        views_by_cam[cam.name] = views
        for mode, attr in _IMAGE_MODE_ATTRS.items():
            if mode not in opts.modes:
                continue
            buf = getattr(views, attr)
            path = os.path.join(out, cam.name, mode, stem + ".png")
            _staged_write(path, lambda p, b=buf: write_png(p, b))
            entries.append(
                {
                    "index": index,
                    "frame_id": frame.frame_id,
                    "camera": cam.name,
                    "mode": mode,
                    "path": os.path.relpath(path, out),
                }
            )
        if "pointcloud" in opts.modes:
            pts, iids, cids = depth_to_pointcloud(
                views.depth, views.instance_mask, views.class_mask,
                cam, cam_pose, opts.depth_scale,
            )
            path = os.path.join(out, "pointcloud", f"{stem}_{cam.name}.ply")
            _staged_write(path, lambda p: write_ply(p, pts, iids, cids))
            entries.append(
                {
                    "index": index,
                    "frame_id": frame.frame_id,
                    "camera": cam.name,
                    "mode": "pointcloud",
                    "path": os.path.relpath(path, out),
                }
            )
    if "annotations" in opts.modes:
        ann = annotations_for_frame(
            scene,
            frame.frame_id,
            frame.timestamp_ms,
            posed.object_poses,
            {n: b.to_aabb() for n, b in frame.object_aabbs.items()},
            posed.camera_poses,
            views_by_cam,
        )
        path = os.path.join(out, "annotations", stem + ".json")
        _staged_write(path, lambda p: _write_text(p, json.dumps(ann, indent=1) + "\n"))
        entries.append(
            {
                "index": index,
                "frame_id": frame.frame_id,
                "camera": "",
                "mode": "annotations",
                "path": os.path.relpath(path, out),
            }
        )
    return entries


_POOL_CTX: tuple | None = None


def _pool_init(scene: Scene, opts: PlaybackOptions):
    global _POOL_CTX
    _POOL_CTX = (scene, opts)


def _pool_task(args) -> list[dict]:
    index, frame = args
    scene, opts = _POOL_CTX
    return render_frame_outputs(scene, frame, index, opts)


def run_playback(seq: Sequence, scene: Scene, opts: PlaybackOptions) -> dict:
    """Render every selected frame for every camera and write the manifest."""
    check_sequence_against_scene(seq, scene)
    selected = select_frames(seq, opts.skip, opts.keep)
    warnings = []
    if not selected:
        warnings.append(
            f"empty selection (skip={opts.skip}, keep={opts.keep}, length={len(seq.frames)})"
        )
    out = opts.output_dir
    os.makedirs(out, exist_ok=True)
    for cam in scene.cameras:
        for mode in opts.modes & set(_IMAGE_MODE_ATTRS):
            os.makedirs(os.path.join(out, cam.name, mode), exist_ok=True)
    if "pointcloud" in opts.modes:
        os.makedirs(os.path.join(out, "pointcloud"), exist_ok=True)
    if "annotations" in opts.modes:
        os.makedirs(os.path.join(out, "annotations"), exist_ok=True)

    tasks = list(enumerate(selected))
    if opts.workers > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(opts.workers, initializer=_pool_init, initargs=(scene, opts)) as pool:
            per_frame = pool.map(_pool_task, tasks)
    else:
        per_frame = [render_frame_outputs(scene, fr, i, opts) for i, fr in tasks]

    entries = [e for frame_entries in per_frame for e in frame_entries]
    entries.sort(key=lambda e: (e["index"], e["camera"], e["mode"]))
    manifest = {
        "scene": seq.meta.scene_ref,
        "tick_hz": seq.meta.tick_hz,
        "depth_scale": opts.depth_scale,
        "modes": sorted(opts.modes),
        "skip": opts.skip,
        "keep": opts.keep,
        "num_frames": len(selected),
        "cameras": scene.camera_names(),
        "entries": entries,
        "warnings": warnings,
    }
    _staged_write(
        os.path.join(out, "manifest.json"),
        lambda p: _write_text(p, json.dumps(manifest, indent=1) + "\n"),
    )
    return manifest
