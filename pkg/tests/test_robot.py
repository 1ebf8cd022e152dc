import math

import numpy as np
import pytest

from robosynth.data import data_path
from robosynth.robot import (
    FingerChain,
    HandDef,
    Joint,
    RobotError,
    Skeleton,
    Socket,
    finger_pose_interpolate,
    forward_kinematics,
    ik_chain_points,
    load_robot,
    socket_world_pose,
    two_bone_ik,
)
from robosynth.transforms import Pose, compose, quat_rotate, quat_to_matrix

from conftest import random_pose


def chain_skeleton(n, rng=None):
    joints = [Joint("j0", None, Pose.identity() if rng is None else random_pose(rng))]
    for i in range(1, n):
        local = Pose.identity() if rng is None else random_pose(rng)
        joints.append(Joint(f"j{i}", f"j{i-1}", local))
    return Skeleton(joints=joints)


def test_fk_identity_chain_stays_at_origin():
    skel = chain_skeleton(2)
    fk = forward_kinematics(skel, Pose.identity())
    assert np.allclose(fk["j0"].pos, 0)
    assert np.allclose(fk["j1"].pos, 0)


def test_fk_child_translation_under_moved_root():
    joints = [
        Joint("root", None, Pose.identity()),
        Joint("child", "root", Pose.from_translation(0, 0, 0.3)),
    ]
    skel = Skeleton(joints=joints)
    fk = forward_kinematics(skel, Pose.from_translation(1, 0, 0))
    assert np.allclose(fk["child"].pos, [1, 0, 0.3])


def test_fk_matches_recursive_oracle(rng):
    # independent recursion: world(j) = world(parent) * local(j) evaluated
    # with raw quaternion matrices, no shared code path
    skel = chain_skeleton(5, rng)
    root = random_pose(rng)
    overrides = {"j2": random_pose(rng)}
    fk = forward_kinematics(skel, root, overrides)

    def oracle(joint_idx):
        local = overrides.get(f"j{joint_idx}", skel.joints[joint_idx].bind_local)
        if joint_idx == 0:
            base_p, base_r = root.pos, quat_to_matrix(root.quat)
        else:
            base_p, base_r = oracle(joint_idx - 1)
        return base_p + base_r @ local.pos, base_r @ quat_to_matrix(local.quat)

    for i in range(5):
        p, r = oracle(i)
        got = fk[f"j{i}"]
        assert np.max(np.abs(got.pos - p)) <= 1e-9
        assert np.max(np.abs(quat_to_matrix(got.quat) - r)) <= 1e-9


def test_fk_unknown_override_names_joint():
    skel = chain_skeleton(2)
    with pytest.raises(RobotError, match="ghost"):
        forward_kinematics(skel, Pose.identity(), {"ghost": Pose.identity()})


def test_fk_local_change_affects_only_subtree(rng):
    # j0 -> j1 -> j2, plus j0 -> j3 (sibling branch)
    joints = [
        Joint("j0", None, random_pose(rng)),
        Joint("j1", "j0", random_pose(rng)),
        Joint("j2", "j1", random_pose(rng)),
        Joint("j3", "j0", random_pose(rng)),
    ]
    skel = Skeleton(joints=joints)
    root = random_pose(rng)
    base = forward_kinematics(skel, root)
    moved = forward_kinematics(skel, root, {"j1": random_pose(rng)})
    assert moved["j0"].approx_equal(base["j0"])
    assert moved["j3"].approx_equal(base["j3"])
    assert not moved["j2"].approx_equal(base["j2"])


def test_skeleton_validation():
    with pytest.raises(RobotError):  # two roots
        Skeleton(joints=[Joint("a", None, Pose.identity()), Joint("b", None, Pose.identity())])
    with pytest.raises(RobotError):  # parent after child
        Skeleton(joints=[Joint("a", "b", Pose.identity()), Joint("b", None, Pose.identity())])
    with pytest.raises(RobotError):  # socket on unknown joint
        Skeleton(
            joints=[Joint("a", None, Pose.identity())],
            sockets={"s": Socket(joint="nope", offset=Pose.identity())},
        )


def test_socket_world_pose():
    skel = Skeleton(
        joints=[Joint("root", None, Pose.identity())],
        sockets={
            "ident": Socket("root", Pose.identity()),
            "up": Socket("root", Pose.from_translation(0, 0, 0.1)),
        },
    )
    p = Pose.from_translation(1, 2, 3)
    fk = forward_kinematics(skel, p)
    assert socket_world_pose(skel, fk, "ident").approx_equal(p)
    assert np.allclose(socket_world_pose(skel, fk, "up").pos, [1, 2, 3.1])
    with pytest.raises(RobotError):
        socket_world_pose(skel, fk, "nope")


def test_socket_under_rotated_joint_matches_compose(rng):
    offset = random_pose(rng)
    skel = Skeleton(
        joints=[Joint("root", None, random_pose(rng))],
        sockets={"s": Socket("root", offset)},
    )
    root = random_pose(rng)
    fk = forward_kinematics(skel, root)
    expected = compose(fk["root"], offset)
    assert socket_world_pose(skel, fk, "s").approx_equal(expected, tol=1e-9)


# ---------------------------------------------------------------------------
# two-bone IK
# ---------------------------------------------------------------------------

def test_ik_full_reach_straight():
    sol = two_bone_ik((0, 0, 0), 0.3, 0.3, (0.6, 0, 0), (0, 1, 0))
    assert np.isclose(sol.elbow_angle, math.pi)
    _, wrist = ik_chain_points((0, 0, 0), 0.3, 0.3, sol)
    assert np.max(np.abs(wrist - [0.6, 0, 0])) <= 1e-9


def test_ik_right_angle_law_of_cosines():
    d = 0.3 * math.sqrt(2)
    sol = two_bone_ik((0, 0, 0), 0.3, 0.3, (d, 0, 0), (0, 1, 0))
    assert np.isclose(sol.elbow_angle, math.pi / 2)
    _, wrist = ik_chain_points((0, 0, 0), 0.3, 0.3, sol)
    assert np.max(np.abs(wrist - [d, 0, 0])) <= 1e-9


def test_ik_beyond_reach_clamps_along_ray():
    sol = two_bone_ik((0, 0, 0), 0.3, 0.3, (1.0, 0, 0), (0, 1, 0))
    _, wrist = ik_chain_points((0, 0, 0), 0.3, 0.3, sol)
    assert np.max(np.abs(wrist - [0.6, 0, 0])) <= 1e-9


def test_ik_too_close_clamps_to_inner_radius():
    sol = two_bone_ik((0, 0, 0), 0.4, 0.25, (0.01, 0, 0), (0, 1, 0))
    _, wrist = ik_chain_points((0, 0, 0), 0.4, 0.25, sol)
    assert np.isclose(np.linalg.norm(wrist), 0.15, atol=1e-9)


def test_ik_elbow_bends_toward_pole():
    sol = two_bone_ik((0, 0, 0), 0.3, 0.3, (0.4, 0, 0), (0, 0, 1))
    elbow, _ = ik_chain_points((0, 0, 0), 0.3, 0.3, sol)
    assert elbow[2] > 1e-6  # displaced toward +Z pole


def test_ik_random_reachable_targets(rng):
    for _ in range(2000):
        upper = rng.uniform(0.1, 0.6)
        fore = rng.uniform(0.1, 0.6)
        shoulder = rng.uniform(-1, 1, 3)
        r = rng.uniform(abs(upper - fore) + 1e-6, upper + fore - 1e-6)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        target = shoulder + r * direction
        pole = rng.normal(size=3)
        sol = two_bone_ik(shoulder, upper, fore, target, pole)
        _, wrist = ik_chain_points(shoulder, upper, fore, sol)
        assert np.linalg.norm(wrist - target) <= 1e-6


# ---------------------------------------------------------------------------
# finger chains
# ---------------------------------------------------------------------------

def finger_fixture():
    opens = [Pose.from_translation(0.03, 0, 0) for _ in range(3)]
    closed = [
        Pose.from_axis_angle((1, 0, 0), np.radians(80), pos=(0.03, 0, 0)) for _ in range(3)
    ]
    return FingerChain(
        name="index",
        phalanges=["i1", "i2", "i3"],
        open_local=opens,
        closed_local=closed,
        trigger_radius=[0.012] * 3,
    )


def test_finger_interpolate_endpoints():
    chain = finger_fixture()
    p0 = finger_pose_interpolate(chain, 0.0)
    p1 = finger_pose_interpolate(chain, 1.0)
    for got, want in zip(p0, chain.open_local):
        assert got.approx_equal(want, tol=1e-12)
    for got, want in zip(p1, chain.closed_local):
        assert got.approx_equal(want, tol=1e-12)


def test_finger_interpolate_half_angle():
    chain = finger_fixture()
    mid = finger_pose_interpolate(chain, 0.5)
    want = Pose.from_axis_angle((1, 0, 0), np.radians(40), pos=(0.03, 0, 0))
    for got in mid:
        assert got.approx_equal(want, tol=1e-9)


def test_finger_interpolate_continuity():
    chain = finger_fixture()
    e = 0.4321
    a = finger_pose_interpolate(chain, e)
    b = finger_pose_interpolate(chain, e + 1e-6)
    for pa, pb in zip(a, b):
        dot = abs(float(np.dot(pa.quat, pb.quat)))
        angle = 2.0 * math.acos(min(1.0, dot))
        assert angle < 1e-4
        assert np.max(np.abs(pa.pos - pb.pos)) < 1e-6


def test_hand_requires_thumb():
    chain = finger_fixture()
    with pytest.raises(RobotError, match="thumb"):
        HandDef(side="right", wrist="w", fingers=[chain])


def test_load_bundled_mannequin():
    robot = load_robot(data_path("robots", "mannequin.json"))
    assert len(robot.hands) == 2
    for side in ("left", "right"):
        hand = robot.hand(side)
        assert {f.name for f in hand.fingers} == {"thumb", "index", "middle", "ring", "pinky"}
        shoulder, elbow, wrist = robot.arm_chain(side)
        assert robot.skeleton.parent_of(wrist) == elbow
        assert robot.skeleton.parent_of(elbow) == shoulder
    assert "head_cam" in robot.skeleton.sockets
    assert robot.skeleton.display_meshes
