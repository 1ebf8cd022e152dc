"""Live simulation: fixed-rate tick loop, named commands, HUD, recording.

Input handling is decoupled from behavior: wire messages are parsed into
Command values by `handle_command`, and the tick applies whatever commands
arrived, in arrival order. Sub-system errors surface as HUD messages
rather than halting the loop. Sim time is derived from the tick counter
(tick k is exactly k/tick_hz seconds), never from the wall clock, so
scripted runs are bit-deterministic.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .bvh import closest_distance
from .camera import CameraDef, Intrinsics
from .grasp import (
    Contact,
    GraspAction,
    HandState,
    _mesh_bvh,
    apply_attachment,
    attach,
    chain_triggers,
    detect_contacts,
    evaluate_grasp,
    release,
    step_fall,
    step_fingers,
    update_triggers,
)
from .recorder import Recorder, RecorderError
from .robot import apply_arm_ik, finger_pose_interpolate, forward_kinematics
from .scene import Scene, SceneSnapshot, build_snapshot
from .transforms import Pose, compose, invert, quat_from_axis_angle, quat_mul

MAX_SPEED = 5.0            # m/s clamp on move commands
MAX_YAW_RATE = 2.0 * math.pi
HUD_STATE_TTL = 5.0        # seconds
HUD_ERROR_TTL = 30.0
PREVIEW_EVERY = 3          # ticks between preview frames


class ProtocolError(ValueError):
    """Malformed wire message; the connection survives, an error reply goes back."""


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Move:
    dx: float = 0.0     # m/s, robot forward (+X)
    dy: float = 0.0     # m/s, robot left (+Y)
    dyaw: float = 0.0   # rad/s about world Z


@dataclass(frozen=True)
class HandTarget:
    side: str
    target: Pose        # wrist pose in the robot root frame


@dataclass(frozen=True)
class Grip:
    side: str
    value: float        # [0, 1], clamped


@dataclass(frozen=True)
class ToggleRecord:
    pass


@dataclass(frozen=True)
class Reset:
    pass


@dataclass(frozen=True)
class SelectCamera:
    name: str


@dataclass(frozen=True)
class Noop:
    notice: str | None = None


Command = Move | HandTarget | Grip | ToggleRecord | Reset | SelectCamera | Noop


def _finite(value, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ProtocolError(f"{what} is not a number") from None
    if not math.isfinite(v):
        raise ProtocolError(f"{what} is not finite")
    return v


def _side(msg: dict) -> str:
    side = msg.get("side")
    if side not in ("left", "right"):
        raise ProtocolError(f"side must be left/right, got {side!r}")
    return side


def handle_command(msg: dict) -> Command:
    """Wire message -> Command: parsed, validated, clamped.

    Unknown types become Noop with a notice (shown on the HUD); malformed
    messages raise ProtocolError.
    """
    if not isinstance(msg, dict):
        raise ProtocolError("message must be an object")
    mtype = msg.get("type")
    if mtype == "move":
        return Move(
            dx=float(np.clip(_finite(msg.get("dx", 0.0), "dx"), -MAX_SPEED, MAX_SPEED)),
            dy=float(np.clip(_finite(msg.get("dy", 0.0), "dy"), -MAX_SPEED, MAX_SPEED)),
            dyaw=float(
                np.clip(_finite(msg.get("dyaw", 0.0), "dyaw"), -MAX_YAW_RATE, MAX_YAW_RATE)
            ),
        )
    if mtype == "hand":
        pos = msg.get("pos")
        if not isinstance(pos, (list, tuple)) or len(pos) != 3:
            raise ProtocolError("hand target needs pos [x, y, z]")
        quat = msg.get("quat", [1.0, 0.0, 0.0, 0.0])
        if not isinstance(quat, (list, tuple)) or len(quat) != 4:
            raise ProtocolError("hand quat needs [w, x, y, z]")
        p = [_finite(c, "hand pos") for c in pos]
        q = [_finite(c, "hand quat") for c in quat]
        if sum(c * c for c in q) < 1e-12:
            raise ProtocolError("hand quat is zero")
        return HandTarget(side=_side(msg), target=Pose(pos=np.array(p), quat=np.array(q)))
    if mtype == "grip":
        v = _finite(msg.get("value", 0.0), "grip value")
        return Grip(side=_side(msg), value=float(np.clip(v, 0.0, 1.0)))
    if mtype == "toggle_record":
        return ToggleRecord()
    if mtype == "reset":
        return Reset()
    if mtype == "camera":
        name = msg.get("name")
        if not isinstance(name, str) or not name:
            raise ProtocolError("camera command needs a name")
        return SelectCamera(name)
    return Noop(notice=f"unknown command type {mtype!r}")


# ---------------------------------------------------------------------------
# HUD
# ---------------------------------------------------------------------------

@dataclass
class HudMessage:
    level: str          # "state" | "error" | "recording"
    text: str
    created_at: float   # sim seconds
    ttl_s: float | None  # None = persistent


def hud_push(hud: list[HudMessage], level: str, text: str, now: float) -> None:
    """Append a message; a new error evicts the previous one."""
    if level == "state":
        hud.append(HudMessage("state", text, now, HUD_STATE_TTL))
    elif level == "error":
        hud[:] = [m for m in hud if m.level != "error"]
        hud.append(HudMessage("error", text, now, HUD_ERROR_TTL))
    elif level == "recording":
        hud.append(HudMessage("recording", text, now, None))
    else:
        raise ValueError(f"unknown HUD level {level!r}")


def hud_expire(hud: list[HudMessage], now: float) -> None:
    """Drop messages strictly past created_at + ttl; persistent ones stay."""
    hud[:] = [m for m in hud if m.ttl_s is None or now <= m.created_at + m.ttl_s]


def hud_remove_recording(hud: list[HudMessage]) -> None:
    hud[:] = [m for m in hud if m.level != "recording"]


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------

@dataclass
class SimConfig:
    tick_hz: float = 30.0
    scene_ref: str = ""
    record_raw_path: str | None = None   # fixed path (scripted recording)
    record_dir: str | None = None        # one file per session (live serve)
    start_wallclock: str | None = None   # pin for deterministic scripted runs
    preview_width: int = 192


class Simulator:
    """Owns all mutable simulation state; one tick() call advances one step.

    Single-threaded by contract: the network layer communicates with the
    loop through command lists only.
    """

    def __init__(self, scene: Scene, config: SimConfig | None = None):
        self.scene = scene
        self.config = config or SimConfig()
        self.hz = float(self.config.tick_hz)
        self.dt = 1.0 / self.hz
        self.tick_count = 0
        self.sim_time = 0.0
        self.recorder = Recorder()
        self._session_index = 0
        self.hud: list[HudMessage] = []
        self.preview_camera = scene.camera_names()[0]
        self.events_log: list[dict] = []
        self._grabbable = [o for o in scene.objects if o.grabbable]
        self.reset_world()

    # -- state management ---------------------------------------------------

    def reset_world(self) -> None:
        scene = self.scene
        self.object_poses: dict[str, Pose] = {o.name: o.pose.copy() for o in scene.objects}
        self.root_pose: Pose = scene.robot_root_pose.copy()
        self.root_velocity = Move()
        self.hand_targets: dict[str, Pose] = {}
        self.hands: dict[str, HandState] = {
            h.side: HandState.for_hand(h) for h in scene.robot.hands
        }
        self.locals_map: dict[str, Pose] = {}
        for h in scene.robot.hands:
            self._write_finger_locals(h.side)
        self.falling: dict[str, np.ndarray] = {}
        self._prev_wrist: dict[str, np.ndarray] = {}
        fk = forward_kinematics(scene.robot.skeleton, self.root_pose, self.locals_map)
        self.snapshot: SceneSnapshot = build_snapshot(
            scene, self.tick_count, self._ts_ms(self.tick_count), self.object_poses, fk
        )

    def _ts_ms(self, tick: int) -> int:
        return int(math.floor(1000.0 * tick / self.hz + 0.5))

    def _write_finger_locals(self, side: str) -> None:
        hand_def = self.scene.robot.hand(side)
        state = self.hands[side]
        for chain in hand_def.fingers:
            poses = finger_pose_interpolate(chain, state.extents[chain.name])
            for joint, pose in zip(chain.phalanges, poses):
                self.locals_map[joint] = pose

    # -- HUD ----------------------------------------------------------------

    def hud_state(self, text: str) -> None:
        hud_push(self.hud, "state", text, self.sim_time)

    def hud_error(self, text: str) -> None:
        hud_push(self.hud, "error", text, self.sim_time)

    def hud_list(self) -> list[dict]:
        out = []
        for m in self.hud:
            remaining = None if m.ttl_s is None else max(
                0.0, m.created_at + m.ttl_s - self.sim_time
            )
            out.append({"level": m.level, "text": m.text, "remaining_s": remaining})
        return out

    # -- recording ----------------------------------------------------------

    def _record_target_path(self) -> str | None:
        if self.config.record_raw_path:
            return self.config.record_raw_path
        if self.config.record_dir:
            os.makedirs(self.config.record_dir, exist_ok=True)
            path = os.path.join(
                self.config.record_dir, f"session_{self._session_index:03d}.rawlog"
            )
            return path
        return None

    def _toggle_record(self, events: list[dict]) -> None:
        if self.recorder.is_open:
            summary = self.recorder.end()
            hud_remove_recording(self.hud)
            self.hud_state(
                f"recording stopped: {summary.frames_written} frames"
                + (f", {summary.frames_dropped} dropped" if summary.frames_dropped else "")
            )
            events.append(
                {
                    "type": "record_stopped",
                    "frames": summary.frames_written,
                    "dropped": summary.frames_dropped,
                }
            )
            return
        path = self._record_target_path()
        if path is None:
            # the paper's "no tracker in scene" failure mode: error, stay off
            self.hud_error("cannot record: no output configured")
            return
        try:
            self.recorder.begin(
                path,
                scene_ref=self.config.scene_ref,
                tick_hz=self.hz,
                start_wallclock=self.config.start_wallclock,
            )
        except RecorderError as e:
            self.hud_error(f"cannot record: {e}")
            return
        self._session_index += 1
        hud_push(self.hud, "recording", "RECORDING", self.sim_time)
        events.append({"type": "record_started", "path": path})

    @property
    def recording(self) -> bool:
        return self.recorder.is_open

    # -- command application --------------------------------------------------

    def _apply_command(self, cmd, events: list[dict]) -> None:
        if isinstance(cmd, Move):
            self.root_velocity = cmd
        elif isinstance(cmd, HandTarget):
            if cmd.side in self.hands:
                self.hand_targets[cmd.side] = cmd.target
            else:
                self.hud_error(f"robot has no {cmd.side} hand")
        elif isinstance(cmd, Grip):
            if cmd.side in self.hands:
                self.hands[cmd.side].grip_input = cmd.value
            else:
                self.hud_error(f"robot has no {cmd.side} hand")
        elif isinstance(cmd, ToggleRecord):
            self._toggle_record(events)
        elif isinstance(cmd, Reset):
            self.reset_world()
            self.hud_state("scene reset")
        elif isinstance(cmd, SelectCamera):
            if cmd.name in self.scene.camera_names():
                self.preview_camera = cmd.name
                self.hud_state(f"camera: {cmd.name}")
            else:
                self.hud_error(f"unknown camera {cmd.name!r}")
        elif isinstance(cmd, Noop):
            if cmd.notice:
                self.hud_state(cmd.notice)
        else:
            raise TypeError(f"not a command: {cmd!r}")

    def _integrate_root(self) -> None:
        v = self.root_velocity
        if v.dx == 0.0 and v.dy == 0.0 and v.dyaw == 0.0:
            return
        delta_world = self.root_pose.rotate(np.array([v.dx, v.dy, 0.0])) * self.dt
        quat = self.root_pose.quat
        if v.dyaw != 0.0:
            quat = quat_mul(quat_from_axis_angle((0, 0, 1), v.dyaw * self.dt), quat)
        self.root_pose = Pose(pos=self.root_pose.pos + delta_world, quat=quat)

    # -- grasp plumbing -------------------------------------------------------

    def _finger_contact_probe(self, side: str, fk: dict[str, Pose]):
        """Probe (finger, candidate_extent) -> any trigger touching a grabbable.

        Re-poses only the finger subtree under the current wrist transform,
        which is fixed while fingers step.
        """
        hand_def = self.scene.robot.hand(side)
        wrist_world = fk[hand_def.wrist]
        grabbable = self._grabbable

        def probe(finger: str, extent: float) -> bool:
            chain = hand_def.finger(finger)
            poses = finger_pose_interpolate(chain, extent)
            sub_fk: dict[str, Pose] = {}
            parent_world = wrist_world
            for joint, local in zip(chain.phalanges, poses):
                parent_world = compose(parent_world, local)
                sub_fk[joint] = parent_world
            spheres = chain_triggers(side, chain, sub_fk)
            for obj in grabbable:
                if self.hands[side].grasped_object == obj.name:
                    continue  # the held object travels with the hand
                pose = self.object_poses[obj.name]
                bb = obj.world_aabb(pose)
                inv_pose = invert(pose)
                for s in spheres:
                    margin = s.radius
                    if (
                        s.center[0] < bb.min[0] - margin or s.center[0] > bb.max[0] + margin
                        or s.center[1] < bb.min[1] - margin or s.center[1] > bb.max[1] + margin
                        or s.center[2] < bb.min[2] - margin or s.center[2] > bb.max[2] + margin
                    ):
                        continue
                    local_c = inv_pose.apply(s.center)
                    if closest_distance(_mesh_bvh(obj.mesh), local_c) <= s.radius:
                        return True
            return False

        return probe

    def _wrist_velocity(self, side: str, fk: dict[str, Pose]) -> np.ndarray:
        wrist = self.scene.robot.hand(side).wrist
        cur = fk[wrist].pos
        prev = self._prev_wrist.get(side)
        if prev is None:
            return np.zeros(3)
        return (cur - prev) / self.dt

    # -- the tick ---------------------------------------------------------------

    def tick(self, commands: list[Command] | None = None) -> list[dict]:
        """Advance one fixed step; returns the events this tick emitted."""
        events: list[dict] = []
        self.sim_time = self.tick_count / self.hz
        tick_of_event = self.tick_count

        for cmd in commands or []:
            self._apply_command(cmd, events)

        # (1) base motion + arm IK toward hand targets
        self._integrate_root()
        fk = forward_kinematics(self.scene.robot.skeleton, self.root_pose, self.locals_map)
        for side in sorted(self.hand_targets):
            target_world = compose(self.root_pose, self.hand_targets[side])
            pole = self.root_pose.rotate(np.array([1.0, 0.0, 0.0]))  # body-forward
            try:
                apply_arm_ik(self.scene.robot, side, fk, target_world, pole, self.locals_map)
            except Exception as e:
                self.hud_error(f"{side} arm IK failed: {e}")

        # (2) forward kinematics with the new arm pose
        fk = forward_kinematics(self.scene.robot.skeleton, self.root_pose, self.locals_map)

        # (3)+(4) contact-limited finger stepping (probes re-check per substep)
        for side in sorted(self.hands):
            state = self.hands[side]
            probe = self._finger_contact_probe(side, fk)
            step_fingers(state, state.grip_input, probe, self.dt)
            self._write_finger_locals(side)
        fk = forward_kinematics(self.scene.robot.skeleton, self.root_pose, self.locals_map)

        # (5) grasp decisions, left then right, on fresh contacts
        contacts: list[Contact] = []
        for side in sorted(self.hands):
            hand_def = self.scene.robot.hand(side)
            triggers = update_triggers(hand_def, fk)
            contacts.extend(detect_contacts(triggers, self._snapshot_view(fk), self.scene))
        for side in sorted(self.hands):
            state = self.hands[side]
            other = "right" if side == "left" else "left"
            held_elsewhere = (
                self.hands[other].grasped_object if other in self.hands else None
            )
            usable = [c for c in contacts if c.object_name != held_elsewhere]
            decision = evaluate_grasp(state, usable)
            wrist_world = fk[self.scene.robot.hand(side).wrist]
            if decision.action is GraspAction.ATTACH:
                obj = decision.object_name
                attach(state, obj, wrist_world, self.object_poses[obj])
                self.falling.pop(obj, None)
                self.hud_state(f"{side} hand grasped {obj}")
                events.append({"type": "attach", "side": side, "object": obj})
            elif decision.action is GraspAction.HOLD:
                self.object_poses[state.grasped_object] = apply_attachment(state, wrist_world)
            elif decision.action is GraspAction.RELEASE:
                obj = release(state)
                self.falling[obj] = self._wrist_velocity(side, fk)
                self.hud_state(f"{side} hand released {obj}")
                events.append({"type": "release", "side": side, "object": obj})
            self._prev_wrist[side] = wrist_world.pos.copy()

        # (5b) ballistic settling of released objects
        for name in sorted(self.falling):
            obj = self.scene.object(name)
            others = [
                self.scene.object(n).world_aabb(p)
                for n, p in self.object_poses.items()
                if n != name
            ]
            pose, vel, landed = step_fall(
                obj.world_aabb, self.object_poses[name], self.falling[name], self.dt, others
            )
            self.object_poses[name] = pose
            if landed:
                del self.falling[name]
                events.append({"type": "rest", "object": name})
            else:
                self.falling[name] = vel

        # (6) snapshot, (7) record, (8) HUD expiry
        self.snapshot = build_snapshot(
            self.scene,
            self.tick_count,
            self._ts_ms(self.tick_count),
            self.object_poses,
            fk,
        )
        if self.recorder.is_open:
            self.recorder.record(self.snapshot)
        hud_expire(self.hud, self.sim_time)

        self.tick_count += 1
        for e in events:
            e.setdefault("tick", tick_of_event)
        self.events_log.extend(events)
        return events

    def _snapshot_view(self, fk: dict[str, Pose]) -> SceneSnapshot:
        """Lightweight posed view for contact queries (no AABB/camera work)."""
        return SceneSnapshot(
            frame_id=self.tick_count,
            timestamp_ms=self._ts_ms(self.tick_count),
            object_poses=self.object_poses,
            joint_poses=fk,
            camera_poses={},
            object_aabbs={},
        )

    def state_message(self) -> dict:
        return {
            "type": "state",
            "tick": self.tick_count,
            "recording": self.recording,
            "grasped": {
                side: self.hands[side].grasped_object if side in self.hands else None
                for side in ("left", "right")
            },
            "hud": self.hud_list(),
            "camera": self.preview_camera,
        }


def preview_camera_def(cam: CameraDef, max_width: int) -> CameraDef:
    """Scaled-down copy of a camera for preview encoding (same FoV)."""
    intr = cam.intrinsics
    if intr.width <= max_width:
        return cam
    scale = max_width / intr.width
    w = int(round(intr.width * scale))
    h = max(1, int(round(intr.height * scale)))
    small = Intrinsics(
        width=w, height=h,
        fx=intr.fx * scale, fy=intr.fy * scale,
        cx=w / 2.0, cy=h / 2.0,
    )
    return dc_replace(cam, intrinsics=small)


def encode_preview(sim: Simulator, camera_name: str | None = None) -> dict:
    """Render the preview camera's RGB view and wrap it as a frame message."""
    import base64

    from .imgio import png_bytes
    from .render import assemble_geometry, render_view

    name = camera_name or sim.preview_camera
    cam = sim.scene.camera(name)
    small = preview_camera_def(cam, sim.config.preview_width)
    snap = sim.snapshot
    geom = assemble_geometry(sim.scene, snap.object_poses, snap.joint_poses)
    views = render_view(geom, sim.scene, small, snap.camera_poses[name], {"rgb"})
    data = base64.b64encode(png_bytes(views.rgb)).decode("ascii")
    return {
        "type": "frame",
        "camera": name,
        "tick": sim.tick_count,
        "width": small.intrinsics.width,
        "height": small.intrinsics.height,
        "encoding": "png-base64",
        "data": data,
    }


# ---------------------------------------------------------------------------
# Scripts: the deterministic stand-in for a human operator
# ---------------------------------------------------------------------------

@dataclass
class Script:
    entries: list[tuple[int, dict]]  # (tick, wire message), ticks non-decreasing

    def __post_init__(self):
        last = -1
        for t, _ in self.entries:
            if t < last:
                raise ValueError("script ticks must be non-decreasing")
            last = t

    @property
    def last_tick(self) -> int:
        return self.entries[-1][0] if self.entries else -1

    def at(self, tick: int) -> list[dict]:
        return [m for t, m in self.entries if t == tick]


def load_script(path: str) -> Script:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = []
    for item in doc.get("commands", []):
        item = dict(item)
        tick = int(item.pop("tick"))
        entries.append((tick, item))
    return Script(entries=entries)


def run_script(
    scene: Scene,
    script: Script,
    raw_path: str,
    scene_ref: str = "",
    tick_hz: float = 30.0,
    grace_ticks: int = 30,
    total_ticks: int | None = None,
) -> Simulator:
    """Drive a simulator headlessly; identical scripts yield identical logs.

    The recorder header's wall clock is pinned so reruns are byte-identical.
    If the script leaves recording on, the session is closed at the end.
    """
    config = SimConfig(
        tick_hz=tick_hz,
        scene_ref=scene_ref,
        record_raw_path=raw_path,
        start_wallclock="script",
    )
    sim = Simulator(scene, config)
    total = total_ticks if total_ticks is not None else script.last_tick + 1 + grace_ticks
    for k in range(total):
        commands = [handle_command(m) for m in script.at(k)]
        sim.tick(commands)
    if sim.recorder.is_open:
        sim.recorder.end()
        hud_remove_recording(sim.hud)
    return sim
