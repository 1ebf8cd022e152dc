"""Deterministic ray-cast renderer and annotation generator.

One ray per pixel, cast through pixel centers, no anti-aliasing: label
images stay exact. Depth is planar (camera-frame Z, not ray length),
encoded 16-bit in units of `depth_scale` with 0 reserved for no-hit.
Normals are geometric face normals flipped to face the ray, encoded
round(255*(n+1)/2). Shading is flat Lambertian from directional lights
plus an ambient term; photorealism is explicitly out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvh import BVH, build_bvh, intersect_rays
from .camera import CameraDef, Intrinsics
from .scene import Scene
from .transforms import Pose, compose, invert, quat_to_matrix


@dataclass
class PosedGeometry:
    """World-space triangle soup for one frame with per-triangle labels."""

    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    instance_ids: np.ndarray  # (M,) uint16 per triangle
    class_ids: np.ndarray
    albedo: np.ndarray        # (M, 3) in [0, 1]
    _bvh: BVH | None = field(default=None, repr=False)

    @property
    def num_triangles(self) -> int:
        return len(self.v0)

    def bvh(self) -> BVH:
        if self._bvh is None:
            self._bvh = build_bvh(self.v0, self.v1, self.v2)
        return self._bvh

    def face_normals(self) -> np.ndarray:
        n = np.cross(self.v1 - self.v0, self.v2 - self.v0)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def assemble_geometry(
    scene: Scene,
    object_poses: dict[str, Pose],
    joint_poses: dict[str, Pose],
) -> PosedGeometry:
    """Posed world triangles: scene objects plus the robot's display meshes.

    The robot body carries the scene's reserved robot instance id so it
    appears in its own masks.
    """
    v0s, v1s, v2s, iids, cids, albs = [], [], [], [], [], []

    def add(mesh, pose: Pose, iid: int, cid: int, albedo):
        pts = pose.apply(mesh.vertices)
        t = mesh.triangles
        v0s.append(pts[t[:, 0]])
        v1s.append(pts[t[:, 1]])
        v2s.append(pts[t[:, 2]])
        m = len(t)
        iids.append(np.full(m, iid, dtype=np.uint16))
        cids.append(np.full(m, cid, dtype=np.uint16))
        albs.append(np.tile(np.asarray(albedo, dtype=np.float64), (m, 1)))

    for obj in scene.objects:
        add(obj.mesh, object_poses[obj.name], obj.instance_id, obj.class_id, obj.albedo)
    rob_albedo = (0.8, 0.8, 0.82)
    for dm in scene.robot.skeleton.display_meshes:
        add(dm.mesh, compose(joint_poses[dm.joint], dm.offset), scene.robot_instance_id,
            scene.robot_class_id, rob_albedo)

    if not v0s:  # a valid scene can still have nothing to draw
        empty = np.zeros((0, 3))
        return PosedGeometry(
            v0=empty, v1=empty.copy(), v2=empty.copy(),
            instance_ids=np.zeros(0, dtype=np.uint16),
            class_ids=np.zeros(0, dtype=np.uint16),
            albedo=np.zeros((0, 3)),
        )
    return PosedGeometry(
        v0=np.concatenate(v0s),
        v1=np.concatenate(v1s),
        v2=np.concatenate(v2s),
        instance_ids=np.concatenate(iids),
        class_ids=np.concatenate(cids),
        albedo=np.concatenate(albs),
    )


def camera_rays(cam: CameraDef, cam_pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ray origins/directions (row-major), t measured as planar depth.

    Perspective rays keep camera-frame Z = 1 in the direction so the ray
    parameter *is* the planar depth; orthographic rays march along +Z from
    offsets in the image plane.
    """
    intr = cam.intrinsics
    w, h = intr.width, intr.height
    r = quat_to_matrix(cam_pose.quat)
    us = np.arange(w, dtype=np.float64) + 0.5
    vs = np.arange(h, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(us, vs)  # (h, w)
    if cam.projection == "perspective":
        d_cam = np.stack(
            [
                (uu - intr.cx) / intr.fx,
                (vv - intr.cy) / intr.fy,
                np.ones_like(uu),
            ],
            axis=-1,
        ).reshape(-1, 3)
        dirs = d_cam @ r.T
        origins = np.broadcast_to(cam_pose.pos, dirs.shape).copy()
    else:
        s = cam.ortho_width_m / w
        o_cam = np.stack(
            [(uu - intr.cx) * s, (vv - intr.cy) * s, np.zeros_like(uu)], axis=-1
        ).reshape(-1, 3)
        origins = o_cam @ r.T + cam_pose.pos
        dirs = np.broadcast_to(r[:, 2], origins.shape).copy()
    return origins, dirs


TILE = 64


def trace_tiled(
    bvh, origins: np.ndarray, dirs: np.ndarray, width: int, height: int,
    t_min: float, t_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Trace an image's rays in square pixel tiles.

    Tiles keep packets angularly coherent, so BVH subsets collapse quickly;
    results are identical to a single flat call, just faster.
    """
    t = np.empty(width * height)
    tri = np.empty(width * height, dtype=np.int64)
    idx = np.arange(width * height).reshape(height, width)
    for v0 in range(0, height, TILE):
        for u0 in range(0, width, TILE):
            sel = idx[v0 : v0 + TILE, u0 : u0 + TILE].ravel()
            tt, ii = intersect_rays(bvh, origins[sel], dirs[sel], t_min, t_max)
            t[sel] = tt
            tri[sel] = ii
    return t, tri


def quantize_u8(x: np.ndarray) -> np.ndarray:
    """Round half away from zero for non-negative [0,1]-scaled data."""
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_normals(normals: np.ndarray) -> np.ndarray:
    return np.floor(255.0 * (np.clip(normals, -1.0, 1.0) + 1.0) / 2.0 + 0.5).astype(np.uint8)


def shade_rgb(albedo: np.ndarray, normals: np.ndarray, lights, ambient: float) -> np.ndarray:
    """Lambertian: albedo * (ambient + sum intensity * max(0, n . -light_dir))."""
    lum = np.full(len(normals), float(ambient))
    for light in lights:
        incidence = -(normals @ light.direction)
        lum = lum + light.intensity * np.maximum(0.0, incidence)
    return quantize_u8(albedo * lum[:, None])


@dataclass
class RenderedViews:
    """Per-mode image buffers for one camera and frame."""

    width: int
    height: int
    rgb: np.ndarray | None = None          # (h, w, 3) uint8
    depth: np.ndarray | None = None        # (h, w) uint16, units of depth_scale
    instance_mask: np.ndarray | None = None  # (h, w) uint16
    class_mask: np.ndarray | None = None
    normal: np.ndarray | None = None       # (h, w, 3) uint8


IMAGE_MODES = ("rgb", "depth", "mask", "class_mask", "normal")
ALL_MODES = IMAGE_MODES + ("pointcloud", "annotations")


def render_view(
    geom: PosedGeometry,
    scene: Scene,
    cam: CameraDef,
    cam_pose: Pose,
    modes: set[str],
    depth_scale: float = 0.001,
) -> RenderedViews:
    """Trace every pixel once and fill the requested buffers."""
    intr = cam.intrinsics
    w, h = intr.width, intr.height
    if geom.num_triangles == 0:
        t = np.full(w * h, np.inf)
        tri = np.full(w * h, -1, dtype=np.int64)
        dirs = np.zeros((w * h, 3))
    else:
        origins, dirs = camera_rays(cam, cam_pose)
        t, tri = trace_tiled(geom.bvh(), origins, dirs, w, h, cam.near, cam.far)
    hit = tri >= 0
    tri_safe = np.where(hit, tri, 0)

    views = RenderedViews(width=w, height=h)

    if "depth" in modes or "pointcloud" in modes:
        q = np.zeros(len(t), dtype=np.uint16)
        q[hit] = np.minimum(np.floor(t[hit] / depth_scale + 0.5), 65535.0).astype(np.uint16)
        views.depth = q.reshape(h, w)
    if "mask" in modes or "pointcloud" in modes or "annotations" in modes:
        m = np.zeros(len(t), dtype=np.uint16)
        m[hit] = geom.instance_ids[tri_safe[hit]]
        views.instance_mask = m.reshape(h, w)
    if "class_mask" in modes or "pointcloud" in modes:
        c = np.zeros(len(t), dtype=np.uint16)
        c[hit] = geom.class_ids[tri_safe[hit]]
        views.class_mask = c.reshape(h, w)

    if "rgb" in modes or "normal" in modes:
        if geom.num_triangles:
            fn = geom.face_normals()
            n = fn[tri_safe]
            # flip to face the ray
            facing = np.einsum("rk,rk->r", n, dirs) > 0.0
            n[facing] = -n[facing]
        else:
            n = np.zeros((len(t), 3))
        if "normal" in modes:
            buf = np.zeros((len(t), 3), dtype=np.uint8)
            buf[hit] = encode_normals(n[hit])
            views.normal = buf.reshape(h, w, 3)
        if "rgb" in modes:
            rgb = np.zeros((len(t), 3), dtype=np.uint8)
            if np.any(hit):
                rgb[hit] = shade_rgb(
                    geom.albedo[tri_safe[hit]], n[hit], scene.lights, scene.ambient
                )
            views.rgb = rgb.reshape(h, w, 3)
    return views


def mask_to_2d_boxes(instance_mask: np.ndarray) -> dict[int, dict]:
    """Tight pixel boxes per instance id: [umin, vmin, umax, vmax], inclusive."""
    out: dict[int, dict] = {}
    ids = np.unique(instance_mask)
    for iid in ids:
        if iid == 0:
            continue
        vs, us = np.nonzero(instance_mask == iid)
        out[int(iid)] = {
            "bbox2d": [int(us.min()), int(vs.min()), int(us.max()), int(vs.max())],
            "pixel_count": int(len(us)),
        }
    return out


def project_points_cam(intr: Intrinsics, pts_cam: np.ndarray, near: float):
    """Project camera-frame points; entries behind the near plane become None."""
    res = []
    for p in pts_cam:
        if p[2] <= near:
            res.append(None)
        else:
            res.append(
                [float(intr.fx * p[0] / p[2] + intr.cx), float(intr.fy * p[1] / p[2] + intr.cy)]
            )
    return res


def aabb_corners(aabb) -> np.ndarray:
    mn, mx = aabb.min, aabb.max
    return np.array(
        [
            [mn[0], mn[1], mn[2]], [mx[0], mn[1], mn[2]],
            [mn[0], mx[1], mn[2]], [mx[0], mx[1], mn[2]],
            [mn[0], mn[1], mx[2]], [mx[0], mn[1], mx[2]],
            [mn[0], mx[1], mx[2]], [mx[0], mx[1], mx[2]],
        ]
    )


def annotations_for_frame(
    scene: Scene,
    frame_id: int,
    timestamp_ms: int,
    object_poses: dict[str, Pose],
    object_aabbs: dict,
    camera_poses: dict[str, Pose],
    views: dict[str, RenderedViews],
) -> dict:
    """Merge recorded poses/bounds with mask-derived 2D boxes per camera.

    Poses and 3D boxes are copied from the record, never re-derived; objects
    without mask pixels in a camera are omitted from that camera's 2D list
    but keep their global 6D pose entry.
    """
    objects = {}
    for obj in scene.objects:
        pose = object_poses[obj.name]
        bb = object_aabbs[obj.name]
        objects[obj.name] = {
            "instance_id": obj.instance_id,
            "class_id": obj.class_id,
            "class": obj.class_name,
            "pose": pose.to_dict(),
            "aabb_world": bb.to_dict(),
        }

    cameras: dict[str, dict] = {}
    by_iid = {o.instance_id: o for o in scene.objects}
    for cam in scene.cameras:
        if cam.name not in views or views[cam.name].instance_mask is None:
            continue
        cam_pose = camera_poses[cam.name]
        world_to_cam = invert(cam_pose)
        boxes = mask_to_2d_boxes(views[cam.name].instance_mask)
        entry: dict[str, dict] = {}
        for iid, box in boxes.items():
            obj = by_iid.get(iid)
            if obj is None:
                continue  # robot body: labeled in masks, not an annotated object
            corners_cam = world_to_cam.apply(aabb_corners(object_aabbs[obj.name]))
            entry[obj.name] = {
                "instance_id": iid,
                "class_id": obj.class_id,
                **box,
                "aabb_corners_2d": project_points_cam(cam.intrinsics, corners_cam, cam.near),
            }
        cameras[cam.name] = entry
    return {
        "frame_id": frame_id,
        "timestamp_ms": timestamp_ms,
        "objects": objects,
        "cameras": cameras,
    }


def depth_to_pointcloud(
    depth: np.ndarray,
    instance_mask: np.ndarray,
    class_mask: np.ndarray,
    cam: CameraDef,
    cam_pose: Pose,
    depth_scale: float = 0.001,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame labeled points, one per nonzero depth pixel.

    Back-projects through pixel centers using the encoded (quantized) depth,
    so a round trip re-projects to the same pixel within half a unit.
    """
    if depth.shape != instance_mask.shape:
        raise ValueError("depth and mask sizes differ")
    h, w = depth.shape
    vs, us = np.nonzero(depth)
    if len(us) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.uint16), np.zeros(0, dtype=np.uint16)
    z = depth[vs, us].astype(np.float64) * depth_scale
    intr = cam.intrinsics
    if cam.projection == "perspective":
        x = (us + 0.5 - intr.cx) / intr.fx * z
        y = (vs + 0.5 - intr.cy) / intr.fy * z
    else:
        s = cam.ortho_width_m / w
        x = (us + 0.5 - intr.cx) * s
        y = (vs + 0.5 - intr.cy) * s
    pts_cam = np.stack([x, y, z], axis=1)
    r = quat_to_matrix(cam_pose.quat)
    pts_world = pts_cam @ r.T + cam_pose.pos
    iids = instance_mask[vs, us]
    cids = class_mask[vs, us] if class_mask is not None else np.zeros_like(iids)
    return pts_world, iids, cids


_GOLDEN = 0.6180339887498949


def mask_palette_rgb(mask: np.ndarray) -> np.ndarray:
    """Cosmetic id visualization: deterministic golden-ratio hue stepping."""
    import colorsys

    out = np.zeros(mask.shape + (3,), dtype=np.uint8)
    for iid in np.unique(mask):
        if iid == 0:
            continue
        hue = (iid * _GOLDEN) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
        out[mask == iid] = (int(r * 255), int(g * 255), int(b * 255))
    return out
