"""Per-frame recording to a raw text log, and conversion to a structured
sequence file.

The raw log favors tick-rate stability: `record` hands a formatted block to
a bounded queue (1024 frames) consumed by one background writer thread and
returns immediately; on overflow the frame is dropped and counted rather
than ever blocking the simulation tick.

Raw format (UTF-8, LF): a header line

    rawlog v1\t<scene_ref>\t<tick_hz>\t<start_wallclock>

then one block per frame, 6-decimal fixed point, quaternions (w, x, y, z):

    frame <id> <ts_ms>
    cam <name> tx ty tz qw qx qy qz
    obj <name> tx ty tz qw qx qy qz minx miny minz maxx maxy maxz
    joint <name> tx ty tz qw qx qy qz
    end

Frame ids and timestamps are session-relative: ids count 0..N-1 and
ts = round(1000*k/tick_hz), whatever simulator tick the recording was
toggled at.
"""

from __future__ import annotations

import json
import math
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .scene import Scene, SceneSnapshot
from .transforms import AABB, Pose

QUEUE_CAPACITY = 1024
FORMAT_VERSION = "v1"


class RecorderError(RuntimeError):
    pass


class RawFormatError(ValueError):
    """Malformed raw log; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _f(x: float) -> str:
    return f"{x:.6f}"


def _pose_fields(p: Pose) -> str:
    return " ".join(
        [_f(p.pos[0]), _f(p.pos[1]), _f(p.pos[2]),
         _f(p.quat[0]), _f(p.quat[1]), _f(p.quat[2]), _f(p.quat[3])]
    )


def format_frame_block(frame_id: int, ts_ms: int, snap: SceneSnapshot) -> str:
    lines = [f"frame {frame_id} {ts_ms}"]
    for name, pose in snap.camera_poses.items():
        lines.append(f"cam {name} {_pose_fields(pose)}")
    for name, pose in snap.object_poses.items():
        bb = snap.object_aabbs[name]
        lines.append(
            f"obj {name} {_pose_fields(pose)} "
            + " ".join(_f(v) for v in (*bb.min, *bb.max))
        )
    for name, pose in snap.joint_poses.items():
        lines.append(f"joint {name} {_pose_fields(pose)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


@dataclass
class SessionSummary:
    frames_written: int
    frames_dropped: int


class Recorder:
    """Owns at most one open session; begin/record/end enforce the state."""

    def __init__(self):
        self._session_open = False
        self._fh = None
        self._queue: queue.Queue | None = None
        self._writer: threading.Thread | None = None
        self._frames = 0
        self._dropped = 0
        self._write_error: BaseException | None = None
        self._tick_hz = 30.0

    @property
    def is_open(self) -> bool:
        return self._session_open

    def begin(
        self,
        raw_path: str,
        scene_ref: str = "",
        tick_hz: float = 30.0,
        start_wallclock: str | None = None,
    ) -> "Recorder":
        """Open the raw log and start the writer. Errors if already open.

        `start_wallclock` defaults to the real clock; scripted runs pin it
        so identical scripts produce byte-identical logs.
        """
        if self._session_open:
            raise RecorderError("session already open")
        start = start_wallclock or datetime.now(timezone.utc).isoformat(timespec="seconds")
        try:
            self._fh = open(raw_path, "w", encoding="utf-8", newline="\n")
            self._fh.write(
                f"rawlog {FORMAT_VERSION}\t{scene_ref}\t{tick_hz:g}\t{start}\n"
            )
            self._fh.flush()
        except OSError as e:
            self._fh = None
            raise RecorderError(f"cannot open raw log {raw_path!r}: {e}") from e
        self._queue = queue.Queue(maxsize=QUEUE_CAPACITY)
        self._frames = 0
        self._dropped = 0
        self._write_error = None
        self._tick_hz = float(tick_hz)
        self._session_open = True
        self._writer = threading.Thread(target=self._drain, name="rawlog-writer", daemon=True)
        self._writer.start()
        return self

    def _drain(self):
        while True:
            block = self._queue.get()
            if block is None:
                return
            try:
                self._fh.write(block)
            except BaseException as e:  # surfaced at end()
                self._write_error = e
                return

    def record(self, snapshot: SceneSnapshot) -> None:
        """Queue one frame; never blocks (full queue drops and counts)."""
        if not self._session_open:
            raise RecorderError("no session open")
        k = self._frames + self._dropped
        ts = int(math.floor(1000.0 * k / self._tick_hz + 0.5))
        block = format_frame_block(k, ts, snapshot)
        try:
            self._queue.put_nowait(block)
            self._frames += 1
        except queue.Full:
            self._dropped += 1

    def end(self) -> SessionSummary:
        """Flush, close, and report (written, dropped)."""
        if not self._session_open:
            raise RecorderError("no session open")
        self._queue.put(None)
        self._writer.join()
        self._session_open = False
        try:
            self._fh.flush()
            self._fh.close()
        except OSError as e:
            raise RecorderError(f"flush failed: {e}") from e
        finally:
            self._fh = None
        if self._write_error is not None:
            raise RecorderError(f"writer failed: {self._write_error}")
        return SessionSummary(frames_written=self._frames, frames_dropped=self._dropped)


def begin_session(raw_path: str, scene_ref: str = "", tick_hz: float = 30.0,
                  start_wallclock: str | None = None) -> Recorder:
    return Recorder().begin(raw_path, scene_ref, tick_hz, start_wallclock)


def record_frame(session: Recorder, snapshot: SceneSnapshot) -> None:
    session.record(snapshot)


def end_session(session: Recorder) -> SessionSummary:
    return session.end()


# ---------------------------------------------------------------------------
# Structured sequences
# ---------------------------------------------------------------------------

@dataclass
class RecPose:
    """Pose exactly as recorded; never renormalized (validation must see it)."""

    pos: np.ndarray
    quat: np.ndarray

    def to_pose(self) -> Pose:
        return Pose(pos=self.pos, quat=self.quat)

    def to_dict(self) -> dict:
        return {"pos": [float(c) for c in self.pos], "quat": [float(c) for c in self.quat]}

    @classmethod
    def from_dict(cls, d: dict) -> "RecPose":
        return cls(
            pos=np.asarray(d["pos"], dtype=np.float64),
            quat=np.asarray(d["quat"], dtype=np.float64),
        )

    @classmethod
    def of(cls, p: Pose) -> "RecPose":
        return cls(pos=p.pos.copy(), quat=p.quat.copy())


@dataclass
class RecBox:
    """AABB as recorded, free of the min<=max construction check."""

    min: np.ndarray
    max: np.ndarray

    def to_aabb(self) -> AABB:
        return AABB(self.min, self.max)


@dataclass
class FrameRecord:
    frame_id: int
    timestamp_ms: int
    camera_poses: dict[str, RecPose]
    object_poses: dict[str, RecPose]
    object_aabbs: dict[str, RecBox]
    joint_poses: dict[str, RecPose]


@dataclass
class SequenceMeta:
    scene_ref: str
    tick_hz: float
    start: str
    cameras: list[str]
    objects: list[dict]     # {name, instance_id, class, class_id}
    joints: list[str]
    units: str = "m"


@dataclass
class Sequence:
    meta: SequenceMeta
    frames: list[FrameRecord] = field(default_factory=list)


def _parse_floats(parts: list[str], lineno: int, expect: int) -> list[float]:
    if len(parts) != expect:
        raise RawFormatError(lineno, f"expected {expect} numeric fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise RawFormatError(lineno, f"bad number: {e}") from e


def _pose_of(vals: list[float]) -> RecPose:
    return RecPose(pos=np.array(vals[0:3]), quat=np.array(vals[3:7]))


def parse_raw_log(raw_path: str) -> tuple[dict, list[FrameRecord]]:
    """Parse the raw text log into header info and frame records."""
    with open(raw_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise RawFormatError(1, "empty raw log")
    head = lines[0].split("\t")
    if len(head) != 4 or not head[0].startswith("rawlog "):
        raise RawFormatError(1, "bad header")
    version = head[0].split()[1]
    if version != FORMAT_VERSION:
        raise RawFormatError(1, f"unsupported raw format version {version!r}")
    header = {"scene_ref": head[1], "tick_hz": float(head[2]), "start": head[3]}

    frames: list[FrameRecord] = []
    cur: FrameRecord | None = None
    cur_start_line = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "frame":
            if cur is not None:
                raise RawFormatError(cur_start_line, "unterminated frame block")
            if len(parts) != 3:
                raise RawFormatError(lineno, "frame line needs id and timestamp")
            cur = FrameRecord(
                frame_id=int(parts[1]),
                timestamp_ms=int(parts[2]),
                camera_poses={},
                object_poses={},
                object_aabbs={},
                joint_poses={},
            )
            cur_start_line = lineno
        elif kind == "end":
            if cur is None:
                raise RawFormatError(lineno, "end without frame")
            frames.append(cur)
            cur = None
        elif kind in ("cam", "obj", "joint"):
            if cur is None:
                raise RawFormatError(lineno, f"{kind} line outside a frame block")
            name = parts[1]
            if kind == "cam":
                cur.camera_poses[name] = _pose_of(_parse_floats(parts[2:], lineno, 7))
            elif kind == "joint":
                cur.joint_poses[name] = _pose_of(_parse_floats(parts[2:], lineno, 7))
            else:
                vals = _parse_floats(parts[2:], lineno, 13)
                cur.object_poses[name] = _pose_of(vals[:7])
                cur.object_aabbs[name] = RecBox(np.array(vals[7:10]), np.array(vals[10:13]))
        else:
            raise RawFormatError(lineno, f"unknown record kind {kind!r}")
    if cur is not None:
        raise RawFormatError(cur_start_line, f"unterminated frame at line {cur_start_line}")
    return header, frames


def convert_raw_to_sequence(raw_path: str, scene: Scene) -> Sequence:
    """Raw text -> structured Sequence, cross-checked against the scene."""
    header, frames = parse_raw_log(raw_path)
    cam_names = set(scene.camera_names())
    obj_names = {o.name for o in scene.objects}
    joint_names = set(scene.robot.skeleton.joint_names())
    for fr in frames:
        for name in fr.camera_poses:
            if name not in cam_names:
                raise RecorderError(f"frame {fr.frame_id}: unknown camera {name!r}")
        for name in fr.object_poses:
            if name not in obj_names:
                raise RecorderError(f"frame {fr.frame_id}: unknown object {name!r}")
        for name in fr.joint_poses:
            if name not in joint_names:
                raise RecorderError(f"frame {fr.frame_id}: unknown joint {name!r}")
    meta = SequenceMeta(
        scene_ref=header["scene_ref"],
        tick_hz=header["tick_hz"],
        start=header["start"],
        cameras=scene.camera_names(),
        objects=[
            {
                "name": o.name,
                "instance_id": o.instance_id,
                "class": o.class_name,
                "class_id": o.class_id,
            }
            for o in scene.objects
        ],
        joints=scene.robot.skeleton.joint_names(),
    )
    return Sequence(meta=meta, frames=frames)


def sequence_to_dict(seq: Sequence) -> dict:
    frames = []
    for fr in seq.frames:
        frames.append(
            {
                "frame_id": fr.frame_id,
                "timestamp_ms": fr.timestamp_ms,
                "cameras": {n: p.to_dict() for n, p in fr.camera_poses.items()},
                "objects": {
                    n: {
                        **p.to_dict(),
                        "aabb_min": [float(c) for c in fr.object_aabbs[n].min],
                        "aabb_max": [float(c) for c in fr.object_aabbs[n].max],
                    }
                    for n, p in fr.object_poses.items()
                },
                "joints": {n: p.to_dict() for n, p in fr.joint_poses.items()},
            }
        )
    return {
        "meta": {
            "format": "sequence-v1",
            "scene": seq.meta.scene_ref,
            "units": seq.meta.units,
            "tick_hz": seq.meta.tick_hz,
            "start": seq.meta.start,
            "cameras": seq.meta.cameras,
            "objects": seq.meta.objects,
            "joints": seq.meta.joints,
        },
        "frames": frames,
    }


def sequence_from_dict(doc: dict) -> Sequence:
    meta_d = doc["meta"]
    meta = SequenceMeta(
        scene_ref=meta_d.get("scene", ""),
        tick_hz=float(meta_d.get("tick_hz", 30.0)),
        start=meta_d.get("start", ""),
        cameras=list(meta_d.get("cameras", [])),
        objects=list(meta_d.get("objects", [])),
        joints=list(meta_d.get("joints", [])),
        units=meta_d.get("units", "m"),
    )
    frames = []
    for fd in doc.get("frames", []):
        frames.append(
            FrameRecord(
                frame_id=int(fd["frame_id"]),
                timestamp_ms=int(fd["timestamp_ms"]),
                camera_poses={n: RecPose.from_dict(p) for n, p in fd.get("cameras", {}).items()},
                object_poses={n: RecPose.from_dict(p) for n, p in fd.get("objects", {}).items()},
                object_aabbs={
                    n: RecBox(np.asarray(p["aabb_min"]), np.asarray(p["aabb_max"]))
                    for n, p in fd.get("objects", {}).items()
                },
                joint_poses={n: RecPose.from_dict(p) for n, p in fd.get("joints", {}).items()},
            )
        )
    return Sequence(meta=meta, frames=frames)


def save_sequence(seq: Sequence, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sequence_to_dict(seq), fh, indent=1)
        fh.write("\n")


def load_sequence_file(path: str) -> Sequence:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise RecorderError(f"cannot open sequence {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise RecorderError(f"sequence {path!r} is not valid JSON: {e}") from e
    if doc.get("meta", {}).get("format") != "sequence-v1":
        raise RecorderError(f"sequence {path!r}: unknown format")
    return sequence_from_dict(doc)


def sequence_to_raw(seq: Sequence, raw_path: str) -> None:
    """Re-emit the raw text form; converting again is a fixed point."""
    with open(raw_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"rawlog {FORMAT_VERSION}\t{seq.meta.scene_ref}\t{seq.meta.tick_hz:g}\t{seq.meta.start}\n"
        )
        for fr in seq.frames:
            snap_like = _FrameAsSnapshot(fr)
            fh.write(format_frame_block(fr.frame_id, fr.timestamp_ms, snap_like))


class _FrameAsSnapshot:
    """Adapter so format_frame_block can serialize a FrameRecord."""

    def __init__(self, fr: FrameRecord):
        self.camera_poses = fr.camera_poses
        self.object_poses = fr.object_poses
        self.object_aabbs = fr.object_aabbs
        self.joint_poses = fr.joint_poses


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_sequence(seq: Sequence) -> ValidationReport:
    """Check Sequence invariants; findings go in the report, nothing raises."""
    rep = ValidationReport()
    cams, objs, joints = set(seq.meta.cameras), {o["name"] for o in seq.meta.objects}, set(
        seq.meta.joints
    )
    prev_id = None
    prev_ts = None
    for fr in seq.frames:
        fid = fr.frame_id
        if prev_id is not None and fid != prev_id + 1:
            rep.violations.append(f"frame {fid}: gap at {prev_id + 1}")
        prev_id = fid
        if prev_ts is not None and fr.timestamp_ms < prev_ts:
            rep.violations.append(f"frame {fid}: timestamp decreases")
        prev_ts = fr.timestamp_ms
        if set(fr.camera_poses) != cams:
            rep.violations.append(f"frame {fid}: camera coverage mismatch")
        if set(fr.object_poses) != objs:
            rep.violations.append(f"frame {fid}: object coverage mismatch")
        if set(fr.joint_poses) != joints:
            rep.violations.append(f"frame {fid}: joint coverage mismatch")
        for group in (fr.camera_poses, fr.object_poses, fr.joint_poses):
            for name, pose in group.items():
                n = float(np.linalg.norm(pose.quat))
                if abs(n - 1.0) > 1e-4:
                    rep.violations.append(
                        f"frame {fid}: non-unit quaternion for {name!r} (norm {n:.4f})"
                    )
        for name, bb in fr.object_aabbs.items():
            if np.any(bb.min > bb.max):
                rep.violations.append(f"frame {fid}: inverted AABB for {name!r}")
    return rep
