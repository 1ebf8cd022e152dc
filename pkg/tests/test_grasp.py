import math

import numpy as np
import pytest

from robosynth.grasp import (
    ATTACH_GRIP,
    CLOSE_RATE,
    CLOSE_SUBSTEPS,
    Contact,
    GraspAction,
    HandState,
    apply_attachment,
    attach,
    detect_contacts,
    evaluate_grasp,
    no_contact_probe,
    release,
    simulate_release,
    step_fall,
    step_fingers,
    update_triggers,
)
from robosynth.mesh import make_box, world_aabb
from robosynth.robot import FingerChain, HandDef, Joint, Pose, Skeleton, forward_kinematics
from robosynth.scene import SceneSnapshot
from robosynth.transforms import AABB, compose, invert

from conftest import random_pose

DT = 1.0 / 30.0


def make_hand(side="right"):
    fingers = []
    for name, fy in (("thumb", -0.02), ("index", 0.02), ("middle", 0.0)):
        phal = [f"{side[0]}_{name}_{k}" for k in range(3)]
        opens = [Pose.from_translation(0.03, fy if k == 0 else 0, 0) for k in range(3)]
        closed = [
            Pose.from_axis_angle((0, 1, 0), np.radians(60), pos=(0.03, fy if k == 0 else 0, 0))
            for k in range(3)
        ]
        fingers.append(
            FingerChain(name=name, phalanges=phal, open_local=opens,
                        closed_local=closed, trigger_radius=[0.01] * 3)
        )
    return HandDef(side=side, wrist=f"{side[0]}_wrist", fingers=fingers)


def hand_skeleton(hand):
    joints = [Joint(hand.wrist, None, Pose.identity())]
    for chain in hand.fingers:
        parent = hand.wrist
        for joint, local in zip(chain.phalanges, chain.open_local):
            joints.append(Joint(joint, parent, local))
            parent = joint
    return Skeleton(joints=joints)


def test_update_triggers_one_per_phalange():
    hand = make_hand()
    skel = hand_skeleton(hand)
    fk = forward_kinematics(skel, Pose.identity())
    spheres = update_triggers(hand, fk)
    assert len(spheres) == 9  # 3 fingers x 3 phalanges
    for s in spheres:
        assert np.allclose(s.center, fk[f"r_{s.finger}_{s.phalange}"].pos)


def test_update_triggers_centered_at_joint():
    hand = make_hand()
    skel = hand_skeleton(hand)
    fk = forward_kinematics(skel, Pose.from_translation(1, 2, 3))
    spheres = update_triggers(hand, fk)
    first = [s for s in spheres if s.finger == "index" and s.phalange == 0][0]
    assert np.allclose(first.center, fk["r_index_0"].pos)


def test_update_triggers_all_identity_collapses_to_root():
    hand = make_hand()
    joints = [Joint(hand.wrist, None, Pose.identity())]
    for chain in hand.fingers:
        parent = hand.wrist
        for j in chain.phalanges:
            joints.append(Joint(j, parent, Pose.identity()))
            parent = j
    skel = Skeleton(joints=joints)
    root = Pose.from_translation(5, 6, 7)
    fk = forward_kinematics(skel, root)
    for s in update_triggers(hand, fk):
        assert np.allclose(s.center, [5, 6, 7])


class _Obj:
    def __init__(self, name, mesh, pose, grabbable=True):
        self.name = name
        self.mesh = mesh
        self.pose = pose
        self.grabbable = grabbable

    def world_aabb(self, pose=None):
        return world_aabb(self.mesh, pose or self.pose)


class _Scene:
    def __init__(self, objects):
        self.objects = objects


def snapshot_of(objects):
    return SceneSnapshot(
        frame_id=0,
        timestamp_ms=0,
        object_poses={o.name: o.pose for o in objects},
        joint_poses={},
        camera_poses={},
        object_aabbs={},
    )


def sphere_trigger(center, radius=0.01, finger="index", side="right", phalange=0):
    from robosynth.grasp import TriggerSphere

    return TriggerSphere(side=side, finger=finger, phalange=phalange,
                         center=np.asarray(center, float), radius=radius)


def test_contact_against_cube_face():
    cube = _Obj("cube", make_box(1, 1, 1), Pose.identity())
    scene = _Scene([cube])
    snap = snapshot_of([cube])
    hit = detect_contacts([sphere_trigger([0.0, 0.0, 0.505])], snap, scene)
    assert len(hit) == 1
    assert np.isclose(hit[0].penetration, 0.005)
    miss = detect_contacts([sphere_trigger([0.0, 0.0, 0.52])], snap, scene)
    assert miss == []


def test_contacts_ignore_non_grabbable():
    cube = _Obj("cube", make_box(1, 1, 1), Pose.identity(), grabbable=False)
    snap = snapshot_of([cube])
    assert detect_contacts([sphere_trigger([0, 0, 0.5])], snap, _Scene([cube])) == []


def test_contacts_match_exhaustive_oracle(rng):
    # oracle: per-triangle closest-point loop, written against the same
    # penetration rule but through the brute path (no BVH traversal)
    from robosynth.bvh import closest_distance_brute

    for _ in range(40):
        mesh = make_box(*rng.uniform(0.1, 0.6, 3))
        pose = random_pose(rng)
        obj = _Obj("o", mesh, pose)
        scene = _Scene([obj])
        snap = snapshot_of([obj])
        triggers = [sphere_trigger(rng.uniform(-0.8, 0.8, 3), radius=0.05) for _ in range(20)]
        got = {(c.finger, c.phalange): c.penetration for c in detect_contacts(triggers, snap, scene)}
        a, b, c3 = mesh.triangle_corners()
        want = {}
        for t in triggers:
            local = invert(pose).apply(t.center)
            d = closest_distance_brute(a, b, c3, local)
            if d <= t.radius:
                want[(t.finger, t.phalange)] = t.radius - d
        assert set(got) == set(want)
        for key in got:
            assert abs(got[key] - want[key]) <= 1e-12


def test_step_fingers_rate_limit():
    hand = HandState(side="right", extents={"index": 0.0})
    step_fingers(hand, 1.0, no_contact_probe, DT)
    assert np.isclose(hand.extents["index"], CLOSE_RATE * DT)  # 0.1 at 30 Hz
    assert np.isclose(hand.extents["index"], 0.1)


def test_step_fingers_stops_at_contacting_substep():
    hand = HandState(side="right", extents={"index": 0.4})
    stop_at = 0.45

    def probe(_f, extent):
        return extent >= stop_at

    step_fingers(hand, 1.0, probe, DT)
    e = hand.extents["index"]
    sub = (CLOSE_RATE * DT) / CLOSE_SUBSTEPS
    assert stop_at <= e <= 0.4 + CLOSE_RATE * DT + 1e-12
    assert e - sub < stop_at  # the previous substep was not yet touching
    # next tick: still contacting, must not close further
    step_fingers(hand, 1.0, probe, DT)
    assert np.isclose(hand.extents["index"], e)


def test_step_fingers_opening_never_blocked():
    hand = HandState(side="right", extents={"index": 0.5})

    def always_contact(_f, _e):
        return True

    step_fingers(hand, 0.0, always_contact, DT)
    assert np.isclose(hand.extents["index"], 0.4)


def test_evaluate_grasp_attach_requires_thumb():
    hand = HandState(side="right", grip_input=0.6, extents={})
    contacts = [
        Contact("right", "thumb", 0, "mug", 0.001),
        Contact("right", "index", 1, "mug", 0.002),
    ]
    d = evaluate_grasp(hand, contacts)
    assert d.action is GraspAction.ATTACH and d.object_name == "mug"

    hand2 = HandState(side="right", grip_input=0.9, extents={})
    d2 = evaluate_grasp(hand2, [Contact("right", "index", 0, "mug", 0.001)])
    assert d2.action is GraspAction.NONE


def test_evaluate_grasp_thumb_alone_insufficient():
    hand = HandState(side="right", grip_input=0.9, extents={})
    d = evaluate_grasp(hand, [Contact("right", "thumb", 0, "mug", 0.001)])
    assert d.action is GraspAction.NONE


def test_evaluate_grasp_grip_threshold():
    hand = HandState(side="right", grip_input=ATTACH_GRIP - 0.01, extents={})
    contacts = [
        Contact("right", "thumb", 0, "mug", 0.001),
        Contact("right", "index", 0, "mug", 0.001),
    ]
    assert evaluate_grasp(hand, contacts).action is GraspAction.NONE


def test_release_debounce_exactly_three_ticks():
    hand = HandState(side="right", grip_input=0.5, extents={},
                     grasped_object="mug", attach_offset=Pose.identity())
    hand.grip_input = 0.05
    assert evaluate_grasp(hand, []).action is GraspAction.HOLD   # tick 1
    assert evaluate_grasp(hand, []).action is GraspAction.HOLD   # tick 2
    assert evaluate_grasp(hand, []).action is GraspAction.RELEASE  # tick 3
    # a grip recovery resets the counter
    hand2 = HandState(side="right", grip_input=0.05, extents={},
                      grasped_object="mug", attach_offset=Pose.identity())
    evaluate_grasp(hand2, [])
    evaluate_grasp(hand2, [])
    hand2.grip_input = 0.5
    assert evaluate_grasp(hand2, []).action is GraspAction.HOLD
    hand2.grip_input = 0.05
    assert evaluate_grasp(hand2, []).action is GraspAction.HOLD
    assert evaluate_grasp(hand2, []).action is GraspAction.HOLD
    assert evaluate_grasp(hand2, []).action is GraspAction.RELEASE


def test_rigid_attachment_follows_wrist(rng):
    hand = HandState(side="right", extents={})
    wrist0 = random_pose(rng)
    obj0 = random_pose(rng)
    attach(hand, "mug", wrist0, obj0)
    # captured offset reproduces the object pose bit-for-bit at attach time
    assert np.array_equal(apply_attachment(hand, wrist0).pos,
                          compose(wrist0, hand.attach_offset).pos)
    # +0.1 m x translation of the wrist moves the object exactly +0.1 m x
    wrist1 = Pose(pos=wrist0.pos + [0.1, 0, 0], quat=wrist0.quat)
    moved = apply_attachment(hand, wrist1)
    assert np.allclose(moved.pos - apply_attachment(hand, wrist0).pos, [0.1, 0, 0], atol=1e-12)
    # relative pose is constant under arbitrary wrist motion
    for _ in range(50):
        w = random_pose(rng)
        rel = compose(invert(w), apply_attachment(hand, w))
        assert rel.approx_equal(hand.attach_offset, tol=1e-9)
    assert release(hand) == "mug"
    assert hand.grasped_object is None and hand.attach_offset is None


def test_hands_are_independent():
    left = HandState(side="left", extents={"index": 0.0})
    right = HandState(side="right", extents={"index": 0.0})
    step_fingers(left, 1.0, no_contact_probe, DT)
    assert right.extents["index"] == 0.0
    attach(left, "cup", Pose.identity(), Pose.identity())
    assert right.grasped_object is None


# ---------------------------------------------------------------------------
# post-release ballistics
# ---------------------------------------------------------------------------

def aabb_fn_for(mesh):
    def fn(pose):
        return world_aabb(mesh, pose)

    return fn


def test_drop_time_from_half_meter():
    mesh = make_box(0.05, 0.05, 0.05)
    start = Pose.from_translation(0, 0, 0.5 + 0.025)
    traj = simulate_release(aabb_fn_for(mesh), start, np.zeros(3), DT, [])
    t_land = (len(traj) - 1) * DT
    expected = math.sqrt(2 * 0.5 / 9.81)
    assert abs(t_land - expected) <= 2 * DT
    assert np.isclose(traj[-1].pos[2], 0.025)  # resting on the floor plane


def test_drop_zero_height_rests_immediately():
    mesh = make_box(0.05, 0.05, 0.05)
    start = Pose.from_translation(0, 0, 0.025)
    traj = simulate_release(aabb_fn_for(mesh), start, np.zeros(3), DT, [])
    assert len(traj) == 2  # one settling step
    assert np.isclose(traj[-1].pos[2], 0.025)


def test_projectile_downrange_distance():
    mesh = make_box(0.05, 0.05, 0.05)
    start = Pose.from_translation(0, 0, 0.525)
    traj = simulate_release(aabb_fn_for(mesh), start, np.array([1.0, 0, 0]), DT, [])
    x = traj[-1].pos[0]
    assert abs(x - 0.319) <= 0.05  # ~0.319 m at 1 m/s over a 0.5 m fall


def test_fall_rests_on_supporting_box():
    mesh = make_box(0.05, 0.05, 0.05)
    support = AABB([-0.1, -0.1, 0.0], [0.1, 0.1, 0.4])
    start = Pose.from_translation(0, 0, 1.0)
    traj = simulate_release(aabb_fn_for(mesh), start, np.zeros(3), DT, [support])
    assert np.isclose(traj[-1].pos[2], 0.4 + 0.025)
    pose, vel, landed = step_fall(aabb_fn_for(mesh), traj[-1], np.zeros(3), DT, [support])
    assert landed
