"""robosynth: headless robotic-scene simulation and synthetic ground truth.

A teleoperated (or scripted) kinematic robot grasps objects in a small
scene; every frame is recorded to a replayable sequence; an offline
playback pass re-poses the scene and renders RGB, depth, instance/class
masks, normals, labeled point clouds, and 2D/3D box + 6D pose annotations
from any number of cameras.
"""

from .transforms import AABB, Pose, compose, invert, quat_slerp
from .mesh import TriMesh, load_obj, make_box, make_cylinder, make_sphere, world_aabb
from .scene import Scene, SceneSnapshot, load_scene, save_scene
from .robot import (
    FingerChain,
    HandDef,
    Robot,
    Skeleton,
    finger_pose_interpolate,
    forward_kinematics,
    load_robot,
    socket_world_pose,
    two_bone_ik,
)
from .camera import (
    CameraDef,
    Intrinsics,
    backproject,
    intrinsics_from_fov,
    look_at,
    make_stereo_pair,
    project,
    resolve_camera_pose,
)

__version__ = "0.1.0"
