"""Cameras: intrinsics, placement (static or socket-attached), projection, stereo.

The optical frame follows the computer-vision convention: +X right, +Y down,
+Z forward. A camera pose is the camera-to-world transform of that frame;
the world itself stays Z-up. Rays are cast through pixel centers (u + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .transforms import Pose, compose, quat_from_matrix


class CameraError(ValueError):
    """Bad camera parameters or an unresolvable placement."""


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise CameraError(f"image size {self.width}x{self.height} invalid")
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
        }


def intrinsics_from_fov(horizontal_fov_deg: float, width: int, height: int) -> Intrinsics:
    """Square-pixel pinhole intrinsics from a horizontal field of view."""
    if not 0.0 < horizontal_fov_deg < 180.0:
        raise CameraError(f"fov {horizontal_fov_deg} deg out of (0, 180)")
    fx = (width / 2.0) / np.tan(np.radians(horizontal_fov_deg) / 2.0)
    return Intrinsics(width=int(width), height=int(height), fx=float(fx), fy=float(fx),
                      cx=width / 2.0, cy=height / 2.0)


@dataclass(frozen=True)
class FollowRules:
    """Per-channel attachment rules: which socket channels the camera follows."""

    location: bool = True
    rotation: bool = True


@dataclass(frozen=True)
class Placement:
    """Static(pose) or Attached(socket, offset, follow rules)."""

    static_pose: Pose | None = None
    socket: str | None = None
    offset: Pose = field(default_factory=Pose.identity)
    follow: FollowRules = field(default_factory=FollowRules)

    @classmethod
    def static(cls, pose: Pose) -> "Placement":
        return cls(static_pose=pose)

    @classmethod
    def attached(cls, socket: str, offset: Pose | None = None,
                 follow: FollowRules | None = None) -> "Placement":
        return cls(socket=socket, offset=offset or Pose.identity(),
                   follow=follow or FollowRules())

    @property
    def is_attached(self) -> bool:
        return self.socket is not None


@dataclass
class CameraDef:
    name: str
    intrinsics: Intrinsics
    placement: Placement
    near: float = 0.01
    far: float = 100.0
    projection: str = "perspective"   # or "orthographic"
    ortho_width_m: float = 0.0
    fov_deg: float | None = None      # as declared in the scene file, for round trips
    # world pose at scene load; channels not followed fall back to this
    initial_world: Pose | None = None

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise CameraError(f"camera {self.name!r}: need 0 < near < far")
        if self.projection not in ("perspective", "orthographic"):
            raise CameraError(f"camera {self.name!r}: unknown projection {self.projection!r}")
        if self.projection == "orthographic" and self.ortho_width_m <= 0:
            raise CameraError(f"camera {self.name!r}: orthographic needs ortho_width_m > 0")


def resolve_camera_pose(cam: CameraDef, socket_poses: dict[str, Pose]) -> Pose:
    """World pose of a camera given the current socket poses.

    Attached cameras follow socket∘offset; a non-followed channel keeps the
    camera's initial world value of that channel instead.
    """
    pl = cam.placement
    if not pl.is_attached:
        return pl.static_pose.copy()
    if pl.socket not in socket_poses:
        raise CameraError(f"camera {cam.name!r}: socket {pl.socket!r} not resolvable")
    followed = compose(socket_poses[pl.socket], pl.offset)
    rules = pl.follow
    if rules.location and rules.rotation:
        return followed
    base = cam.initial_world if cam.initial_world is not None else followed
    return Pose(
        pos=followed.pos if rules.location else base.pos,
        quat=followed.quat if rules.rotation else base.quat,
    )


BEHIND_CAMERA = None  # sentinel returned by project() for points at/behind the near plane


def project(intr: Intrinsics, point_cam, near: float = 0.0):
    """Pinhole projection of a camera-frame point to pixel coordinates.

    Returns (u, v) floats, or None when the point lies at or behind
    the near plane.
    """
    x, y, z = np.asarray(point_cam, dtype=np.float64)
    if z <= near:
        return BEHIND_CAMERA
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def backproject(intr: Intrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """Camera-frame point for a continuous pixel coordinate and planar depth."""
    return np.array(
        [
            (u - intr.cx) / intr.fx * depth,
            (v - intr.cy) / intr.fy * depth,
            depth,
        ]
    )


@dataclass(frozen=True)
class StereoPair:
    left: CameraDef
    right: CameraDef
    baseline: float


def make_stereo_pair(base: CameraDef, baseline: float) -> StereoPair:
    """Left/right pair sharing intrinsics; right offset +baseline along camera X."""
    if baseline <= 0:
        raise CameraError("stereo baseline must be positive")
    shift = Pose.from_translation(baseline, 0.0, 0.0)
    pl = base.placement
    if pl.is_attached:
        left_pl = pl
        right_pl = Placement(socket=pl.socket, offset=compose(pl.offset, shift), follow=pl.follow)
    else:
        left_pl = pl
        right_pl = Placement.static(compose(pl.static_pose, shift))
    left = replace(base, name=base.name + "_L", placement=left_pl)
    right = replace(
        base,
        name=base.name + "_R",
        placement=right_pl,
        initial_world=(
            compose(base.initial_world, shift) if base.initial_world is not None else None
        ),
    )
    return StereoPair(left=left, right=right, baseline=float(baseline))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +Z toward the target (CV frame, +Y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise CameraError("look_at: eye and target coincide")
    z = fwd / n
    upv = np.asarray(up, dtype=np.float64)
    x = np.cross(z, upv)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # looking straight up/down: pick a stable right vector
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    m = np.stack([x, y, z], axis=1)
    return Pose(pos=eye, quat=quat_from_matrix(m))
