"""Robot model: joint hierarchy, forward kinematics, sockets, hands, arm IK.

A skeleton is an ordered joint list (parents before children) with named
sockets (joint + fixed local offset) that cameras and props attach to.
Hands are finger chains with open/closed endpoint poses per phalange and a
trigger-sphere radius per phalange.

Rig convention for IK-driven arms: the elbow's bind translation lies along
the shoulder's local +X axis and the wrist's along the elbow's local +X
axis, with the elbow hinging about local +Z. `two_bone_ik` solves in world
space under that convention; `apply_arm_ik` converts the solution into
joint-local overrides for any parent chain.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mesh import TriMesh, mesh_from_spec
from .transforms import (
    Pose,
    compose,
    invert,
    quat_from_matrix,
    quat_mul,
    quat_normalize,
    quat_slerp,
)


class RobotError(ValueError):
    """Malformed robot definition or an invalid kinematics request."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str | None
    bind_local: Pose


@dataclass
class Socket:
    joint: str
    offset: Pose


@dataclass
class DisplayMesh:
    joint: str
    mesh: TriMesh
    offset: Pose


@dataclass
class Skeleton:
    joints: list[Joint]
    sockets: dict[str, Socket] = field(default_factory=dict)
    display_meshes: list[DisplayMesh] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        roots = 0
        for j in self.joints:
            if j.name in seen:
                raise RobotError(f"duplicate joint {j.name!r}")
            if j.parent is None:
                roots += 1
            elif j.parent not in seen:
                raise RobotError(f"joint {j.name!r}: parent {j.parent!r} does not precede it")
            seen.add(j.name)
        if roots != 1:
            raise RobotError(f"skeleton needs exactly one root, found {roots}")
        for name, s in self.sockets.items():
            if s.joint not in seen:
                raise RobotError(f"socket {name!r} references unknown joint {s.joint!r}")
        for dm in self.display_meshes:
            if dm.joint not in seen:
                raise RobotError(f"display mesh references unknown joint {dm.joint!r}")
        self._by_name = {j.name: j for j in self.joints}

    @property
    def root(self) -> Joint:
        return self.joints[0]

    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def joint(self, name: str) -> Joint:
        try:
            return self._by_name[name]
        except KeyError:
            raise RobotError(f"unknown joint {name!r}") from None

    def parent_of(self, name: str) -> str | None:
        return self.joint(name).parent


def forward_kinematics(
    skel: Skeleton, root_pose: Pose, locals_map: dict[str, Pose] | None = None
) -> dict[str, Pose]:
    """World pose per joint: world(j) = world(parent(j)) ∘ local(j).

    `locals_map` overrides individual joints' local poses; absent joints use
    their bind pose. The root's world pose is root_pose ∘ local(root).
    """
    locals_map = locals_map or {}
    for name in locals_map:
        if name not in skel._by_name:
            raise RobotError(f"local pose override for unknown joint {name!r}")
    world: dict[str, Pose] = {}
    for j in skel.joints:
        local = locals_map.get(j.name, j.bind_local)
        base = root_pose if j.parent is None else world[j.parent]
        world[j.name] = compose(base, local)
    return world


def socket_world_pose(skel: Skeleton, fk: dict[str, Pose], socket_name: str) -> Pose:
    if socket_name not in skel.sockets:
        raise RobotError(f"unknown socket {socket_name!r}")
    s = skel.sockets[socket_name]
    return compose(fk[s.joint], s.offset)


def all_socket_poses(skel: Skeleton, fk: dict[str, Pose]) -> dict[str, Pose]:
    return {name: compose(fk[s.joint], s.offset) for name, s in skel.sockets.items()}


@dataclass
class FingerChain:
    name: str
    phalanges: list[str]           # proximal -> distal joint names
    open_local: list[Pose]
    closed_local: list[Pose]
    trigger_radius: list[float]    # meters, one per phalange

    def __post_init__(self):
        n = len(self.phalanges)
        if n < 1:
            raise RobotError(f"finger {self.name!r} has no phalanges")
        if not (len(self.open_local) == len(self.closed_local) == len(self.trigger_radius) == n):
            raise RobotError(f"finger {self.name!r}: per-phalange lists must match length {n}")
        if any(r <= 0 for r in self.trigger_radius):
            raise RobotError(f"finger {self.name!r}: trigger radii must be positive")


@dataclass
class HandDef:
    side: str                      # "left" | "right"
    wrist: str
    fingers: list[FingerChain]
    palm_socket: str | None = None

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise RobotError(f"hand side must be left/right, got {self.side!r}")
        names = [f.name for f in self.fingers]
        if len(set(names)) != len(names):
            raise RobotError(f"{self.side} hand: duplicate finger names")
        if "thumb" not in names:
            raise RobotError(f"{self.side} hand: a thumb finger is required")

    def finger(self, name: str) -> FingerChain:
        for f in self.fingers:
            if f.name == name:
                return f
        raise RobotError(f"{self.side} hand has no finger {name!r}")


def finger_pose_interpolate(chain: FingerChain, extent: float) -> list[Pose]:
    """Per-phalange pose between open (0) and closed (1): slerp + lerp."""
    if not 0.0 <= extent <= 1.0:
        raise RobotError(f"finger extent {extent} outside [0, 1]")
    out = []
    for o, c in zip(chain.open_local, chain.closed_local):
        out.append(
            Pose(
                pos=o.pos + extent * (c.pos - o.pos),
                quat=quat_slerp(o.quat, c.quat, extent),
            )
        )
    return out


@dataclass
class Robot:
    name: str
    skeleton: Skeleton
    hands: list[HandDef] = field(default_factory=list)

    def __post_init__(self):
        sides = [h.side for h in self.hands]
        if len(set(sides)) != len(sides):
            raise RobotError("at most one hand per side")
        for h in self.hands:
            self.skeleton.joint(h.wrist)
            for f in h.fingers:
                for p in f.phalanges:
                    self.skeleton.joint(p)

    def hand(self, side: str) -> HandDef:
        for h in self.hands:
            if h.side == side:
                return h
        raise RobotError(f"robot has no {side} hand")

    def arm_chain(self, side: str) -> tuple[str, str, str]:
        """(shoulder, elbow, wrist) joint names, derived from the wrist's parents."""
        wrist = self.hand(side).wrist
        elbow = self.skeleton.parent_of(wrist)
        shoulder = self.skeleton.parent_of(elbow) if elbow else None
        if elbow is None or shoulder is None:
            raise RobotError(f"{side} wrist {wrist!r} lacks a two-bone parent chain")
        return shoulder, elbow, wrist


# ---------------------------------------------------------------------------
# Two-bone analytic IK
# ---------------------------------------------------------------------------

class IKSolution(NamedTuple):
    shoulder_rotation: np.ndarray  # world-frame unit quaternion
    elbow_angle: float             # interior elbow angle, pi = straight


def _orthonormal_to(u: np.ndarray) -> np.ndarray:
    """Deterministic unit vector perpendicular to u."""
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(u)))] = 1.0
    b = np.cross(u, axis)
    return b / np.linalg.norm(b)


def two_bone_ik(
    shoulder_pos,
    upper_len: float,
    fore_len: float,
    target,
    pole_hint=(1.0, 0.0, 0.0),
) -> IKSolution:
    """Analytic shoulder/elbow solution placing the wrist at the target.

    Unreachable targets are clamped to the annulus [|upper-fore|, upper+fore]
    along the shoulder->target ray. The elbow bends toward the plane spanned
    by that ray and `pole_hint` (a direction, not a point).

    With the returned rotation R and elbow angle theta, the wrist lands at
    shoulder + R*(upper, 0, 0) + R*Rz(-(pi-theta))*(fore, 0, 0).
    """
    if upper_len <= 0 or fore_len <= 0:
        raise RobotError("bone lengths must be positive")
    s = np.asarray(shoulder_pos, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    delta = t - s
    d = float(np.linalg.norm(delta))
    d_min = abs(upper_len - fore_len)
    d_max = upper_len + fore_len
    d_eff = min(max(d, d_min, 1e-12), d_max)

    if d < 1e-12:
        pole = np.asarray(pole_hint, dtype=np.float64)
        np_ = np.linalg.norm(pole)
        u = pole / np_ if np_ > 1e-12 else np.array([1.0, 0.0, 0.0])
    else:
        u = delta / d

    pole = np.asarray(pole_hint, dtype=np.float64)
    b = pole - np.dot(pole, u) * u
    nb = np.linalg.norm(b)
    b = b / nb if nb > 1e-9 else _orthonormal_to(u)

    cos_elbow = (upper_len**2 + fore_len**2 - d_eff**2) / (2.0 * upper_len * fore_len)
    theta = math.acos(min(1.0, max(-1.0, cos_elbow)))
    cos_sh = (upper_len**2 + d_eff**2 - fore_len**2) / (2.0 * upper_len * d_eff)
    alpha = math.acos(min(1.0, max(-1.0, cos_sh)))

    upper_dir = math.cos(alpha) * u + math.sin(alpha) * b
    n = np.cross(u, b)
    # frame columns: X = upper arm, Z = elbow hinge axis, Y completes RH
    m = np.stack([upper_dir, np.cross(n, upper_dir), n], axis=1)
    return IKSolution(shoulder_rotation=quat_from_matrix(m), elbow_angle=theta)


def ik_chain_points(
    shoulder_pos, upper_len: float, fore_len: float, sol: IKSolution
) -> tuple[np.ndarray, np.ndarray]:
    """(elbow, wrist) world positions implied by an IK solution."""
    s = np.asarray(shoulder_pos, dtype=np.float64)
    rs = Pose(pos=s, quat=sol.shoulder_rotation)
    elbow = rs.apply(np.array([upper_len, 0.0, 0.0]))
    bend = Pose.from_axis_angle((0.0, 0.0, 1.0), -(math.pi - sol.elbow_angle))
    fore_world = compose(rs, bend).rotate(np.array([fore_len, 0.0, 0.0]))
    return elbow, elbow + fore_world


def apply_arm_ik(
    robot: Robot,
    side: str,
    fk: dict[str, Pose],
    target_world: Pose,
    pole_hint,
    locals_map: dict[str, Pose],
) -> None:
    """Write shoulder/elbow/wrist local overrides that realize an IK target.

    `fk` must be a current FK result (used for the shoulder anchor and the
    parent frame); overrides are stored into `locals_map`.
    """
    shoulder, elbow, wrist = robot.arm_chain(side)
    sk = robot.skeleton
    upper_len = float(np.linalg.norm(sk.joint(elbow).bind_local.pos))
    fore_len = float(np.linalg.norm(sk.joint(wrist).bind_local.pos))
    if upper_len <= 0 or fore_len <= 0:
        raise RobotError(f"{side} arm bones have zero length")

    shoulder_world_pos = fk[shoulder].pos
    sol = two_bone_ik(shoulder_world_pos, upper_len, fore_len, target_world.pos, pole_hint)

    parent = sk.parent_of(shoulder)
    if parent is None:
        raise RobotError(f"{side} shoulder {shoulder!r} must not be the skeleton root")
    parent_q = fk[parent].quat
    parent_inv = np.array([parent_q[0], -parent_q[1], -parent_q[2], -parent_q[3]])
    sh_local_q = quat_normalize(quat_mul(parent_inv, sol.shoulder_rotation))
    locals_map[shoulder] = Pose(pos=sk.joint(shoulder).bind_local.pos, quat=sh_local_q)

    bend = Pose.from_axis_angle((0.0, 0.0, 1.0), -(math.pi - sol.elbow_angle))
    locals_map[elbow] = Pose(pos=sk.joint(elbow).bind_local.pos, quat=bend.quat)

    # wrist: position from bind, rotation chosen so the wrist matches the target
    elbow_world_q = quat_mul(sol.shoulder_rotation, bend.quat)
    elbow_inv = np.array([elbow_world_q[0], -elbow_world_q[1], -elbow_world_q[2], -elbow_world_q[3]])
    wrist_q = quat_normalize(quat_mul(elbow_inv, target_world.quat))
    locals_map[wrist] = Pose(pos=sk.joint(wrist).bind_local.pos, quat=wrist_q)


# ---------------------------------------------------------------------------
# Robot definition files
# ---------------------------------------------------------------------------

def _pose_from(d) -> Pose:
    return Pose.from_dict(d) if d else Pose.identity()


def load_robot(path: str) -> Robot:
    """Load a robot definition JSON (joints, sockets, hands, display meshes)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise RobotError(f"cannot open robot file {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise RobotError(f"robot file {path!r} is not valid JSON: {e}") from e
    base_dir = os.path.dirname(os.path.abspath(path))

    joints = [
        Joint(name=j["name"], parent=j.get("parent"), bind_local=_pose_from(j.get("bind")))
        for j in doc.get("joints", [])
    ]
    sockets = {
        name: Socket(joint=s["joint"], offset=_pose_from(s.get("offset")))
        for name, s in doc.get("sockets", {}).items()
    }
    display = [
        DisplayMesh(
            joint=m["joint"],
            mesh=mesh_from_spec(m["mesh"], base_dir),
            offset=_pose_from(m.get("offset")),
        )
        for m in doc.get("display_meshes", [])
    ]
    skeleton = Skeleton(joints=joints, sockets=sockets, display_meshes=display)

    hands = []
    for h in doc.get("hands", []):
        fingers = []
        for f in h.get("fingers", []):
            n = len(f["phalanges"])
            radius = f.get("trigger_radius", 0.012)
            radii = [float(radius)] * n if np.isscalar(radius) else [float(r) for r in radius]
            fingers.append(
                FingerChain(
                    name=f["name"],
                    phalanges=list(f["phalanges"]),
                    open_local=[_pose_from(p) for p in f["open"]],
                    closed_local=[_pose_from(p) for p in f["closed"]],
                    trigger_radius=radii,
                )
            )
        hands.append(
            HandDef(
                side=h["side"],
                wrist=h["wrist"],
                fingers=fingers,
                palm_socket=h.get("palm_socket"),
            )
        )
    return Robot(name=doc.get("name", os.path.basename(path)), skeleton=skeleton, hands=hands)
