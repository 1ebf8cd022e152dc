"""Grasping: phalange trigger spheres, contacts, contact-limited finger
closing, the grasp/release state machine, rigid attachment, and the
ballistic drop after release.

Per-hand state machines are independent; the simulation tick advances them
in a fixed order (left then right) so runs stay deterministic. Finger
closing is rate-limited and substepped: a closing finger halts at the
first substep whose trigger spheres touch a grabbable object, so thin
geometry cannot be tunneled through; opening is never blocked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .bvh import build_bvh_from_mesh, closest_distance
from .robot import HandDef
from .scene import Scene, SceneSnapshot
from .transforms import Pose, compose, invert

CLOSE_RATE = 3.0          # extent units per second (full close in ~0.33 s)
CLOSE_SUBSTEPS = 8
ATTACH_GRIP = 0.2         # minimum grip input to latch a grasp
HOLD_GRIP = 0.1           # below this the release debounce runs
RELEASE_DEBOUNCE_TICKS = 3
GRAVITY = 9.81            # m/s^2, -Z


@dataclass(frozen=True)
class TriggerSphere:
    side: str
    finger: str
    phalange: int
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class Contact:
    side: str
    finger: str
    phalange: int
    object_name: str
    penetration: float  # radius - surface distance, >= 0


class GraspAction(Enum):
    NONE = "none"
    ATTACH = "attach"
    HOLD = "hold"
    RELEASE = "release"


@dataclass(frozen=True)
class GraspDecision:
    action: GraspAction
    object_name: str | None = None


@dataclass
class HandState:
    side: str
    grip_input: float = 0.0
    extents: dict[str, float] = field(default_factory=dict)
    grasped_object: str | None = None
    attach_offset: Pose | None = None   # object pose in the wrist frame
    release_debounce: int = 0

    def __post_init__(self):
        self.grip_input = float(np.clip(self.grip_input, 0.0, 1.0))
        if (self.grasped_object is None) != (self.attach_offset is None):
            raise ValueError("attach_offset must be present iff an object is grasped")

    @classmethod
    def for_hand(cls, hand: HandDef) -> "HandState":
        return cls(side=hand.side, extents={f.name: 0.0 for f in hand.fingers})


def _mesh_bvh(mesh):
    # cached per mesh instance; meshes are immutable after load
    b = getattr(mesh, "_bvh", None)
    if b is None:
        b = build_bvh_from_mesh(mesh)
        mesh._bvh = b
    return b


def chain_triggers(side: str, chain, fk: dict[str, Pose]) -> list[TriggerSphere]:
    """Trigger spheres of one finger chain at the posed phalange joints."""
    out = []
    for i, joint in enumerate(chain.phalanges):
        if joint not in fk:
            raise KeyError(f"phalange joint {joint!r} missing from FK result")
        out.append(
            TriggerSphere(
                side=side,
                finger=chain.name,
                phalange=i,
                center=fk[joint].pos.copy(),
                radius=chain.trigger_radius[i],
            )
        )
    return out


def update_triggers(hand: HandDef, fk: dict[str, Pose]) -> list[TriggerSphere]:
    """One sphere per phalange of every finger, centered at the joint."""
    out: list[TriggerSphere] = []
    for chain in hand.fingers:
        out.extend(chain_triggers(hand.side, chain, fk))
    return out


def detect_contacts(
    triggers: list[TriggerSphere],
    snapshot: SceneSnapshot,
    scene: Scene,
    brute_force: bool = False,
) -> list[Contact]:
    """Trigger-vs-grabbable-object contacts by sphere-to-mesh distance.

    Distance is from the sphere center to the closest point on the object's
    triangles, evaluated in the object's local frame via its BVH (or the
    exhaustive loop when brute_force, kept as the test oracle).
    """
    out = []
    for obj in scene.objects:
        if not obj.grabbable:
            continue
        pose = snapshot.object_poses[obj.name]
        inv = invert(pose)
        bb = snapshot.object_aabbs.get(obj.name) or obj.world_aabb(pose)
        for trig in triggers:
            c0 = trig.center
            r = trig.radius
            if (
                c0[0] < bb.min[0] - r or c0[0] > bb.max[0] + r
                or c0[1] < bb.min[1] - r or c0[1] > bb.max[1] + r
                or c0[2] < bb.min[2] - r or c0[2] > bb.max[2] + r
            ):
                continue
            local = inv.apply(c0)
            if brute_force:
                from .bvh import closest_distance_brute

                a, b, c = obj.mesh.triangle_corners()
                d = closest_distance_brute(a, b, c, local)
            else:
                d = closest_distance(_mesh_bvh(obj.mesh), local)
            if d <= trig.radius:
                out.append(
                    Contact(
                        side=trig.side,
                        finger=trig.finger,
                        phalange=trig.phalange,
                        object_name=obj.name,
                        penetration=trig.radius - d,
                    )
                )
    return out


ContactProbe = Callable[[str, float], bool]
"""(finger_name, candidate_extent) -> would any of the finger's triggers touch?"""


def step_fingers(
    hand: HandState, grip_input: float, contact_probe: ContactProbe, dt: float
) -> dict[str, float]:
    """Move finger extents toward the grip input, contact-limited while closing.

    Each finger advances at most CLOSE_RATE*dt per tick, split into
    CLOSE_SUBSTEPS equal substeps; a closing finger stops at the first
    substep where `contact_probe` reports a touch. Opening is unrestricted.
    """
    grip = float(np.clip(grip_input, 0.0, 1.0))
    hand.grip_input = grip
    max_step = CLOSE_RATE * dt
    for finger, ext in hand.extents.items():
        delta = float(np.clip(grip - ext, -max_step, max_step))
        if delta == 0.0:
            continue
        if delta < 0.0:  # opening: never blocked
            hand.extents[finger] = max(0.0, ext + delta)
            continue
        if contact_probe(finger, ext):
            continue  # already touching: closing is blocked outright
        sub = delta / CLOSE_SUBSTEPS
        e = ext
        for _ in range(CLOSE_SUBSTEPS):
            cand = min(1.0, e + sub)
            e = cand
            if contact_probe(finger, cand):
                break  # settle on the first touching substep, then hold
        hand.extents[finger] = e
    return dict(hand.extents)


def no_contact_probe(_finger: str, _extent: float) -> bool:
    return False


def evaluate_grasp(hand: HandState, contacts: list[Contact]) -> GraspDecision:
    """Grasp/release policy from this tick's contacts.

    Attach: not grasping, grip >= ATTACH_GRIP, and some object is touched by
    the thumb plus at least one other finger (opposing-contact rule).
    Hold: grasping with grip >= HOLD_GRIP. Release: grip < HOLD_GRIP for
    RELEASE_DEBOUNCE_TICKS consecutive ticks.
    """
    mine = [c for c in contacts if c.side == hand.side]
    if hand.grasped_object is not None:
        if hand.grip_input < HOLD_GRIP:
            hand.release_debounce += 1
            if hand.release_debounce >= RELEASE_DEBOUNCE_TICKS:
                return GraspDecision(GraspAction.RELEASE, hand.grasped_object)
            return GraspDecision(GraspAction.HOLD, hand.grasped_object)
        hand.release_debounce = 0
        return GraspDecision(GraspAction.HOLD, hand.grasped_object)

    hand.release_debounce = 0
    if hand.grip_input < ATTACH_GRIP:
        return GraspDecision(GraspAction.NONE)
    fingers_on: dict[str, set[str]] = {}
    count_on: dict[str, int] = {}
    for c in mine:
        fingers_on.setdefault(c.object_name, set()).add(c.finger)
        count_on[c.object_name] = count_on.get(c.object_name, 0) + 1
    qualified = [
        name
        for name, fs in fingers_on.items()
        if "thumb" in fs and len(fs) >= 2
    ]
    if not qualified:
        return GraspDecision(GraspAction.NONE)
    # deterministic pick: most distinct fingers, then most contacts, then name
    best = sorted(
        qualified,
        key=lambda n: (-len(fingers_on[n]), -count_on[n], n),
    )[0]
    return GraspDecision(GraspAction.ATTACH, best)


def attach(hand: HandState, object_name: str, wrist_world: Pose, object_pose: Pose) -> None:
    """Latch the grasp, capturing the object pose in the wrist frame."""
    hand.grasped_object = object_name
    hand.attach_offset = compose(invert(wrist_world), object_pose)
    hand.release_debounce = 0


def apply_attachment(hand: HandState, wrist_world: Pose) -> Pose:
    """Carried object pose this tick: wrist ∘ captured offset (rigid)."""
    if hand.grasped_object is None or hand.attach_offset is None:
        raise ValueError("no object grasped")
    return compose(wrist_world, hand.attach_offset)


def release(hand: HandState) -> str:
    name = hand.grasped_object
    if name is None:
        raise ValueError("no object grasped")
    hand.grasped_object = None
    hand.attach_offset = None
    hand.release_debounce = 0
    return name


# ---------------------------------------------------------------------------
# Post-release ballistics: gravity drop until the AABB finds support
# ---------------------------------------------------------------------------

@dataclass
class FallingObject:
    name: str
    velocity: np.ndarray  # world m/s


def support_height(footprint: tuple[float, float, float, float], others: list) -> float:
    """Highest resting surface under a footprint: floor z=0 or an AABB top."""
    xmin, xmax, ymin, ymax = footprint
    h = 0.0
    for bb in others:
        if bb.min[0] <= xmax and xmin <= bb.max[0] and bb.min[1] <= ymax and ymin <= bb.max[1]:
            h = max(h, float(bb.max[2]))
    return h


def step_fall(
    obj_aabb_fn: Callable[[Pose], "object"],
    pose: Pose,
    velocity: np.ndarray,
    dt: float,
    other_aabbs: list,
) -> tuple[Pose, np.ndarray, bool]:
    """One semi-implicit Euler step; returns (pose, velocity, landed).

    Landing clamps the object so its AABB bottom sits on the support surface
    (floor plane z=0 or the top of any static AABB overlapping in XY).
    """
    v = np.asarray(velocity, dtype=np.float64).copy()
    v[2] -= GRAVITY * dt
    new_pos = pose.pos + v * dt
    new_pose = Pose(pos=new_pos, quat=pose.quat.copy())
    bb = obj_aabb_fn(new_pose)
    footprint = (float(bb.min[0]), float(bb.max[0]), float(bb.min[1]), float(bb.max[1]))
    support = support_height(footprint, other_aabbs)
    if bb.min[2] <= support + 1e-12:
        lift = support - float(bb.min[2])
        new_pose = Pose(pos=new_pos + np.array([0.0, 0.0, lift]), quat=pose.quat.copy())
        return new_pose, np.zeros(3), True
    return new_pose, v, False


def simulate_release(
    obj_aabb_fn: Callable[[Pose], "object"],
    start_pose: Pose,
    velocity: np.ndarray,
    dt: float,
    other_aabbs: list,
    max_ticks: int = 100000,
) -> list[Pose]:
    """Full drop trajectory from release to rest (first entry = start pose)."""
    poses = [start_pose.copy()]
    pose, v = start_pose, np.asarray(velocity, dtype=np.float64)
    for _ in range(max_ticks):
        pose, v, landed = step_fall(obj_aabb_fn, pose, v, dt, other_aabbs)
        poses.append(pose)
        if landed:
            break
    return poses
