"""Scene description: objects, robot, cameras, lights; loading and snapshots.

The on-disk form is a JSON document (UTF-8) with fields `units` ("m"),
`meshes` (name -> mesh spec), `objects`, `robot`, `cameras`, `lights`, and
`classes` (name -> dense ids from 1). Meshes are OBJ files or built-in
primitives; any per-object scale is baked into vertices at load so all
runtime poses stay rigid.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraDef, FollowRules, Intrinsics, Placement, intrinsics_from_fov, \
    make_stereo_pair, resolve_camera_pose
from .mesh import MeshError, TriMesh, mesh_from_spec, world_aabb
from .robot import Robot, Skeleton, all_socket_poses, forward_kinematics, load_robot
from .transforms import AABB, Pose


class SceneError(ValueError):
    """Base class for scene-file problems."""


class SceneFileMissing(SceneError):
    def __init__(self, path: str):
        super().__init__(f"scene file not found: {path!r}")
        self.path = path


class SceneSchemaError(SceneError):
    pass


class DuplicateNameError(SceneError):
    def __init__(self, kind: str, name: str):
        super().__init__(f"duplicate {kind} name {name!r}")
        self.name = name


class DanglingMeshError(SceneError):
    def __init__(self, obj: str, mesh: str):
        super().__init__(f"object {obj!r} references unknown mesh {mesh!r}")
        self.object = obj
        self.mesh = mesh


@dataclass
class Light:
    direction: np.ndarray  # direction the light travels (world frame)
    intensity: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise SceneSchemaError("light direction must be nonzero")
        self.direction = d if abs(n - 1.0) < 1e-12 else d / n
        self.intensity = float(self.intensity)


@dataclass
class ObjectInstance:
    name: str
    instance_id: int          # dense from 1; 0 is background
    class_name: str
    class_id: int
    mesh_name: str
    mesh: TriMesh             # scale already baked in
    albedo: np.ndarray        # RGB in [0, 1]
    pose: Pose
    grabbable: bool = False
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        if self.instance_id < 1:
            raise SceneSchemaError(f"object {self.name!r}: instance_id must be >= 1")
        self.albedo = np.clip(np.asarray(self.albedo, dtype=np.float64).reshape(3), 0.0, 1.0)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        if self.scale.size == 1:
            self.scale = np.repeat(self.scale, 3)

    def world_aabb(self, pose: Pose | None = None) -> AABB:
        return world_aabb(self.mesh, pose or self.pose)


@dataclass
class Scene:
    objects: list[ObjectInstance]
    robot: Robot
    robot_root_pose: Pose
    cameras: list[CameraDef]
    lights: list[Light]
    ambient: float
    class_map: dict[str, int]
    mesh_specs: dict[str, dict] = field(default_factory=dict)
    robot_file: str | None = None
    source_path: str | None = None

    def __post_init__(self):
        if not self.cameras:
            raise SceneSchemaError("scene needs at least one camera")
        ids = sorted(o.instance_id for o in self.objects)
        if ids != list(range(1, len(ids) + 1)):
            raise SceneSchemaError("object instance ids must be dense from 1")
        cids = sorted(self.class_map.values())
        if cids != list(range(1, len(cids) + 1)):
            raise SceneSchemaError("class ids must be dense from 1")
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise SceneSchemaError("object names must be unique")
        self._by_name = {o.name: o for o in self.objects}
        self._cam_by_name = {c.name: c for c in self.cameras}

    def object(self, name: str) -> ObjectInstance:
        try:
            return self._by_name[name]
        except KeyError:
            raise SceneError(f"unknown object {name!r}") from None

    def camera(self, name: str) -> CameraDef:
        try:
            return self._cam_by_name[name]
        except KeyError:
            raise SceneError(f"unknown camera {name!r}") from None

    def camera_names(self) -> list[str]:
        return [c.name for c in self.cameras]

    @property
    def robot_instance_id(self) -> int:
        """Reserved mask id for the robot body (after all object ids)."""
        return len(self.objects) + 1

    @property
    def robot_class_id(self) -> int:
        return self.class_map.get("robot", 0)


@dataclass
class SceneSnapshot:
    """Fully posed world at one instant; read-only once built."""

    frame_id: int
    timestamp_ms: int
    object_poses: dict[str, Pose]
    joint_poses: dict[str, Pose]      # world poses
    camera_poses: dict[str, Pose]
    object_aabbs: dict[str, AABB]

    def covers(self, scene: Scene) -> bool:
        return (
            set(self.object_poses) == {o.name for o in scene.objects}
            and set(self.joint_poses) == set(scene.robot.skeleton.joint_names())
            and set(self.camera_poses) == set(scene.camera_names())
        )


def build_snapshot(
    scene: Scene,
    frame_id: int,
    timestamp_ms: int,
    object_poses: dict[str, Pose],
    fk: dict[str, Pose],
) -> SceneSnapshot:
    """Assemble a snapshot: resolve cameras from sockets, bound every object."""
    sockets = all_socket_poses(scene.robot.skeleton, fk)
    cam_poses = {c.name: resolve_camera_pose(c, sockets) for c in scene.cameras}
    aabbs = {
        name: scene.object(name).world_aabb(pose) for name, pose in object_poses.items()
    }
    return SceneSnapshot(
        frame_id=frame_id,
        timestamp_ms=timestamp_ms,
        object_poses={k: v.copy() for k, v in object_poses.items()},
        joint_poses={k: v.copy() for k, v in fk.items()},
        camera_poses=cam_poses,
        object_aabbs=aabbs,
    )


def initial_snapshot(scene: Scene) -> SceneSnapshot:
    fk = forward_kinematics(scene.robot.skeleton, scene.robot_root_pose)
    return build_snapshot(
        scene, 0, 0, {o.name: o.pose.copy() for o in scene.objects}, fk
    )


# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------

def _parse_camera(entry: dict, name: str) -> CameraDef:
    width = int(entry.get("width", 640))
    height = int(entry.get("height", 480))
    projection = "perspective"
    ortho_w = 0.0
    fov_deg = None
    if "ortho_width_m" in entry:
        projection = "orthographic"
        ortho_w = float(entry["ortho_width_m"])
        # fx is unused for ortho rays but Intrinsics wants something sane
        intr = Intrinsics(width, height, fx=width / ortho_w, fy=width / ortho_w,
                          cx=width / 2.0, cy=height / 2.0)
    else:
        fov_deg = float(entry.get("fov_deg", 90.0))
        intr = intrinsics_from_fov(fov_deg, width, height)
    placement = entry.get("placement")
    if not isinstance(placement, dict):
        raise SceneSchemaError(f"camera {name!r}: missing placement")
    if "static" in placement:
        pl = Placement.static(Pose.from_dict(placement["static"]))
    elif "socket" in placement:
        fol = placement.get("follow", {})
        pl = Placement.attached(
            socket=placement["socket"],
            offset=Pose.from_dict(placement.get("offset", {})),
            follow=FollowRules(
                location=bool(fol.get("location", True)),
                rotation=bool(fol.get("rotation", True)),
            ),
        )
    else:
        raise SceneSchemaError(f"camera {name!r}: placement needs 'static' or 'socket'")
    return CameraDef(
        name=name,
        intrinsics=intr,
        placement=pl,
        near=float(entry.get("near", 0.01)),
        far=float(entry.get("far", 100.0)),
        projection=projection,
        ortho_width_m=ortho_w,
        fov_deg=fov_deg,
    )


def load_scene(path: str) -> Scene:
    """Load and validate a scene file; see the module docstring for the schema."""
    if not os.path.isfile(path):
        raise SceneFileMissing(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SceneSchemaError(f"{path}: invalid JSON: {e}") from e
    base_dir = os.path.dirname(os.path.abspath(path))

    units = doc.get("units", "m")
    if units != "m":
        raise SceneSchemaError(f"unsupported units {units!r} (only 'm')")

    mesh_specs = doc.get("meshes", {})
    meshes: dict[str, TriMesh] = {}
    for name, spec in mesh_specs.items():
        try:
            meshes[name] = mesh_from_spec(spec, base_dir)
        except MeshError as e:
            raise SceneSchemaError(f"mesh {name!r}: {e}") from e

    objects_doc = doc.get("objects", [])
    class_map: dict[str, int] = dict(doc.get("classes", {}))
    if not class_map:
        next_id = 1
        for entry in objects_doc:
            cname = entry.get("class", "object")
            if cname not in class_map:
                class_map[cname] = next_id
                next_id += 1

    robot_entry = doc.get("robot")
    if robot_entry is None:
        raise SceneSchemaError("scene needs a robot entry")
    if isinstance(robot_entry, str):
        robot_file, robot_pose = robot_entry, Pose.identity()
    else:
        robot_file = robot_entry["file"]
        robot_pose = Pose.from_dict(robot_entry.get("pose", {}))
    robot_path = robot_file if os.path.isabs(robot_file) else os.path.join(base_dir, robot_file)
    robot = load_robot(robot_path)
    if robot.skeleton.display_meshes and "robot" not in class_map:
        class_map["robot"] = len(class_map) + 1

    objects: list[ObjectInstance] = []
    seen: set[str] = set()
    for i, entry in enumerate(objects_doc):
        name = entry["name"]
        if name in seen:
            raise DuplicateNameError("object", name)
        seen.add(name)
        mesh_name = entry["mesh"]
        if mesh_name not in meshes:
            raise DanglingMeshError(name, mesh_name)
        cname = entry.get("class", "object")
        if cname not in class_map:
            raise SceneSchemaError(f"object {name!r}: class {cname!r} not in class map")
        scale = entry.get("scale", 1.0)
        objects.append(
            ObjectInstance(
                name=name,
                instance_id=i + 1,
                class_name=cname,
                class_id=class_map[cname],
                mesh_name=mesh_name,
                mesh=meshes[mesh_name].scaled(scale),
                albedo=np.asarray(entry.get("albedo", [0.7, 0.7, 0.7])),
                pose=Pose.from_dict(entry.get("pose", {})),
                grabbable=bool(entry.get("grabbable", False)),
                scale=np.asarray(scale, dtype=np.float64).reshape(-1),
            )
        )

    lights_doc = doc.get("lights", {})
    lights = [
        Light(direction=np.asarray(e["direction"]), intensity=e.get("intensity", 1.0))
        for e in lights_doc.get("directional", [])
    ]
    ambient = float(lights_doc.get("ambient", 1.0 if not lights else 0.1))

    cameras: list[CameraDef] = []
    cam_seen: set[str] = set()
    for entry in doc.get("cameras", []):
        name = entry["name"]
        if name in cam_seen:
            raise DuplicateNameError("camera", name)
        cam_seen.add(name)
        cam = _parse_camera(entry, name)
        stereo = entry.get("stereo")
        if stereo:
            pair = make_stereo_pair(cam, float(stereo["baseline_m"]))
            cameras.extend([pair.left, pair.right])
        else:
            cameras.append(cam)

    scene = Scene(
        objects=objects,
        robot=robot,
        robot_root_pose=robot_pose,
        cameras=cameras,
        lights=lights,
        ambient=ambient,
        class_map=class_map,
        mesh_specs=mesh_specs,
        robot_file=robot_file,
        source_path=os.path.abspath(path),
    )

    # pin each camera's initial world pose from the bind-pose FK so that
    # partially-followed attachments have a base to fall back on
    fk = forward_kinematics(robot.skeleton, robot_pose)
    sockets = all_socket_poses(robot.skeleton, fk)
    for cam in scene.cameras:
        cam.initial_world = resolve_camera_pose(cam, sockets)
    return scene


def _absolutize(path: str, base_dir: str | None) -> str:
    if os.path.isabs(path) or base_dir is None:
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def scene_to_dict(scene: Scene) -> dict:
    """Serializable form mirroring the scene file schema.

    File references (OBJ meshes, the robot) are absolutized against the
    scene's source directory so a re-saved scene loads from anywhere.
    """
    base_dir = os.path.dirname(scene.source_path) if scene.source_path else None
    mesh_specs = {}
    for name, spec in scene.mesh_specs.items():
        if isinstance(spec, dict) and "obj" in spec:
            mesh_specs[name] = {"obj": _absolutize(spec["obj"], base_dir)}
        else:
            mesh_specs[name] = spec
    cams = []
    for c in scene.cameras:
        entry: dict = {
            "name": c.name,
            "width": c.intrinsics.width,
            "height": c.intrinsics.height,
            "near": c.near,
            "far": c.far,
        }
        if c.projection == "orthographic":
            entry["ortho_width_m"] = c.ortho_width_m
        elif c.fov_deg is not None:
            entry["fov_deg"] = c.fov_deg
        else:
            entry["fov_deg"] = float(
                2.0 * np.degrees(np.arctan((c.intrinsics.width / 2.0) / c.intrinsics.fx))
            )
        pl = c.placement
        if pl.is_attached:
            entry["placement"] = {
                "socket": pl.socket,
                "offset": pl.offset.to_dict(),
                "follow": {"location": pl.follow.location, "rotation": pl.follow.rotation},
            }
        else:
            entry["placement"] = {"static": pl.static_pose.to_dict()}
        cams.append(entry)
    return {
        "units": "m",
        "meshes": mesh_specs,
        "objects": [
            {
                "name": o.name,
                "mesh": o.mesh_name,
                "class": o.class_name,
                "albedo": [float(c) for c in o.albedo],
                "pose": o.pose.to_dict(),
                "scale": [float(s) for s in o.scale],
                "grabbable": o.grabbable,
            }
            for o in scene.objects
        ],
        "robot": {
            "file": _absolutize(scene.robot_file, base_dir),
            "pose": scene.robot_root_pose.to_dict(),
        },
        "cameras": cams,
        "lights": {
            "directional": [
                {"direction": [float(c) for c in l.direction], "intensity": l.intensity}
                for l in scene.lights
            ],
            "ambient": scene.ambient,
        },
        "classes": scene.class_map,
    }


def save_scene(scene: Scene, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
