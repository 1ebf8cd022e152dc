"""Triangle meshes: OBJ ingestion, built-in primitives, world-space bounds.

Meshes are cleaned at load time: degenerate triangles (area <= 1e-12 m^2)
are dropped with a counted warning and missing normals are recomputed
per face. All runtime transforms are rigid; any non-uniform scale is baked
into the vertices once, on load.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .transforms import AABB, Pose

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh data or files."""


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-vertex normals.

    vertices: (N, 3) float64, triangles: (M, 3) int32 indices into vertices,
    normals: (N, 3) unit vectors (recomputed from faces if absent).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    dropped_degenerate: int = field(default=0, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if len(self.vertices) == 0:
            raise MeshError("mesh has no vertices")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise MeshError("triangle index out of range")
        kept = ~self._degenerate_mask()
        dropped = int(np.count_nonzero(~kept))
        if dropped:
            self.triangles = self.triangles[kept]
            self.dropped_degenerate += dropped
            log.warning("dropped %d degenerate triangles", dropped)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no non-degenerate triangles")
        if self.normals is None:
            self.normals = self._vertex_normals()
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.vertices.shape:
                self.normals = self._vertex_normals()

    def _degenerate_mask(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
        return area <= DEGENERATE_AREA

    def _vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals from face geometry."""
        v, t = self.vertices, self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        out = np.zeros_like(v)
        for k in range(3):
            np.add.at(out, t[:, k], fn)
        n = np.linalg.norm(out, axis=1, keepdims=True)
        n[n < 1e-20] = 1.0
        return out / n

    def face_normals(self) -> np.ndarray:
        v, t = self.vertices, self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return fn / np.linalg.norm(fn, axis=1, keepdims=True)

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def scaled(self, scale) -> "TriMesh":
        """Bake a per-axis scale into the vertices (load-time only)."""
        s = np.asarray(scale, dtype=np.float64).reshape(-1)
        if s.size == 1:
            s = np.repeat(s, 3)
        if np.allclose(s, 1.0):
            return self
        return TriMesh(self.vertices * s, self.triangles.copy())

    def local_aabb(self) -> AABB:
        return AABB(self.vertices.min(axis=0), self.vertices.max(axis=0))


def world_aabb(mesh: TriMesh, pose: Pose, scale=(1.0, 1.0, 1.0)) -> AABB:
    """Tight bounds of the transformed vertices (not a rotated-box bound)."""
    if len(mesh.vertices) == 0:
        raise MeshError("cannot bound an empty mesh")
    s = np.asarray(scale, dtype=np.float64).reshape(-1)
    if s.size == 1:
        s = np.repeat(s, 3)
    pts = pose.apply(mesh.vertices * s)
    return AABB(pts.min(axis=0), pts.max(axis=0))


def load_obj(path: str) -> TriMesh:
    """Parse a Wavefront OBJ: v/vn/f records, fan-triangulating polygons.

    Other directives (vt, g, o, mtllib, usemtl, s, ...) are ignored.
    Vertex normals are taken from vn when every face references them,
    otherwise recomputed.
    """
    verts: list[list[float]] = []
    norms: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_norm_idx: list[tuple[int, int, int]] = []
    all_faces_have_normals = True

    def parse_ref(token: str) -> tuple[int, int]:
        # vid, vid/tid, vid//nid, vid/tid/nid; 1-based, negatives relative
        parts = token.split("/")
        vid = int(parts[0])
        nid = 0
        if len(parts) == 3 and parts[2]:
            nid = int(parts[2])
        vid = vid - 1 if vid > 0 else len(verts) + vid
        nid = nid - 1 if nid > 0 else (len(norms) + nid if nid < 0 else -1)
        return vid, nid

    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise MeshError(f"cannot open OBJ file {path!r}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex line")
                verts.append([float(c) for c in tok[1:4]])
            elif tok[0] == "vn":
                norms.append([float(c) for c in tok[1:4]])
            elif tok[0] == "f":
                refs = [parse_ref(t) for t in tok[1:]]
                if len(refs) < 3:
                    raise MeshError(f"{path}:{lineno}: face with <3 vertices")
                if any(nid < 0 for _, nid in refs):
                    all_faces_have_normals = False
                for i in range(2, len(refs)):
                    tris.append((refs[0][0], refs[i - 1][0], refs[i][0]))
                    tri_norm_idx.append((refs[0][1], refs[i - 1][1], refs[i][1]))

    if not verts:
        raise MeshError(f"{path}: no vertices")
    if not tris:
        raise MeshError(f"{path}: no faces")

    vertex_normals = None
    if norms and all_faces_have_normals:
        # accumulate the referenced vn per vertex, normalized afterwards
        acc = np.zeros((len(verts), 3))
        narr = np.asarray(norms, dtype=np.float64)
        for (va, vb, vc), (na, nb, nc) in zip(tris, tri_norm_idx):
            acc[va] += narr[na]
            acc[vb] += narr[nb]
            acc[vc] += narr[nc]
        lens = np.linalg.norm(acc, axis=1, keepdims=True)
        if np.all(lens > 1e-12):
            vertex_normals = acc / lens

    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int32), vertex_normals)


def make_box(size_x: float, size_y: float, size_z: float,
             max_edge: float | None = None) -> TriMesh:
    """Axis-aligned box centered at the origin; 12 triangles by default.

    `max_edge` tessellates each face into a grid so no triangle edge exceeds
    it. Room-scale slabs (floors, walls) need this: one enormous triangle
    inflates every BVH node that contains it.
    """
    hx, hy, hz = 0.5 * size_x, 0.5 * size_y, 0.5 * size_z
    if min(hx, hy, hz) <= 0:
        raise MeshError("box dimensions must be positive")
    if max_edge is None:
        v = np.array(
            [
                [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
                [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
            ]
        )
        t = np.array(
            [
                [0, 2, 1], [0, 3, 2],  # bottom (-z)
                [4, 5, 6], [4, 6, 7],  # top (+z)
                [0, 1, 5], [0, 5, 4],  # -y
                [2, 3, 7], [2, 7, 6],  # +y
                [1, 2, 6], [1, 6, 5],  # +x
                [3, 0, 4], [3, 4, 7],  # -x
            ],
            dtype=np.int32,
        )
        return TriMesh(v, t)

    if max_edge <= 0:
        raise MeshError("max_edge must be positive")
    verts: list[list[float]] = []
    tris: list[list[int]] = []

    def grid_face(origin, eu, ev):
        nu = max(1, int(np.ceil(np.linalg.norm(eu) / max_edge)))
        nv = max(1, int(np.ceil(np.linalg.norm(ev) / max_edge)))
        base = len(verts)
        for j in range(nv + 1):
            for i in range(nu + 1):
                verts.append(list(origin + eu * (i / nu) + ev * (j / nv)))
        for j in range(nv):
            for i in range(nu):
                a = base + j * (nu + 1) + i
                b = a + 1
                c = a + (nu + 1)
                d = c + 1
                tris.append([a, b, d])
                tris.append([a, d, c])

    ex = np.array([size_x, 0, 0.0])
    ey = np.array([0, size_y, 0.0])
    ez = np.array([0, 0, size_z])
    corner = np.array([-hx, -hy, -hz])
    grid_face(corner, ey, ex)                 # bottom, outward -z
    grid_face(corner + ez, ex, ey)            # top
    grid_face(corner, ex, ez)                 # -y
    grid_face(corner + ey, ez, ex)            # +y
    grid_face(corner + ex, ey, ez)            # +x
    grid_face(corner, ez, ey)                 # -x
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int32))


def make_sphere(radius: float, segments: int = 24, rings: int = 16) -> TriMesh:
    """UV sphere centered at the origin."""
    if radius <= 0:
        raise MeshError("sphere radius must be positive")
    segments = max(3, int(segments))
    rings = max(2, int(rings))
    verts = [[0.0, 0.0, radius]]
    for r in range(1, rings):
        phi = np.pi * r / rings
        z = radius * np.cos(phi)
        rr = radius * np.sin(phi)
        for s in range(segments):
            theta = 2.0 * np.pi * s / segments
            verts.append([rr * np.cos(theta), rr * np.sin(theta), z])
    verts.append([0.0, 0.0, -radius])
    top, bottom = 0, len(verts) - 1

    def ring_start(r):  # r in 1..rings-1
        return 1 + (r - 1) * segments

    tris = []
    for s in range(segments):
        tris.append([top, ring_start(1) + s, ring_start(1) + (s + 1) % segments])
    for r in range(1, rings - 1):
        a, b = ring_start(r), ring_start(r + 1)
        for s in range(segments):
            s2 = (s + 1) % segments
            tris.append([a + s, b + s, b + s2])
            tris.append([a + s, b + s2, a + s2])
    last = ring_start(rings - 1)
    for s in range(segments):
        tris.append([bottom, last + (s + 1) % segments, last + s])
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int32))


def make_cylinder(radius: float, height: float, segments: int = 24) -> TriMesh:
    """Z-axis cylinder centered at the origin."""
    if radius <= 0 or height <= 0:
        raise MeshError("cylinder dimensions must be positive")
    segments = max(3, int(segments))
    hz = 0.5 * height
    verts = []
    for z in (-hz, hz):
        for s in range(segments):
            theta = 2.0 * np.pi * s / segments
            verts.append([radius * np.cos(theta), radius * np.sin(theta), z])
    verts.append([0.0, 0.0, -hz])
    verts.append([0.0, 0.0, hz])
    cb, ct = len(verts) - 2, len(verts) - 1
    tris = []
    for s in range(segments):
        s2 = (s + 1) % segments
        lo, lo2, hi, hi2 = s, s2, segments + s, segments + s2
        tris.append([lo, lo2, hi2])
        tris.append([lo, hi2, hi])
        tris.append([cb, lo2, lo])
        tris.append([ct, hi, hi2])
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int32))


def mesh_from_spec(spec: dict, base_dir: str = ".") -> TriMesh:
    """Build a mesh from a scene/robot file mesh entry.

    Accepted forms: {"obj": path}, {"box": [sx, sy, sz]},
    {"sphere": {"radius": r, "segments"?, "rings"?}} (or bare radius),
    {"cylinder": {"radius": r, "height": h, "segments"?}}.
    """
    import os

    if not isinstance(spec, dict) or len(spec) != 1:
        raise MeshError(f"mesh spec must have exactly one kind, got {spec!r}")
    kind, arg = next(iter(spec.items()))
    if kind == "obj":
        p = arg if os.path.isabs(arg) else os.path.join(base_dir, arg)
        return load_obj(p)
    if kind == "box":
        if isinstance(arg, dict):
            sx, sy, sz = (float(c) for c in arg["size"])
            me = arg.get("max_edge")
            return make_box(sx, sy, sz, max_edge=float(me) if me else None)
        return make_box(*[float(c) for c in arg])
    if kind == "sphere":
        if isinstance(arg, dict):
            return make_sphere(
                float(arg["radius"]),
                int(arg.get("segments", 24)),
                int(arg.get("rings", 16)),
            )
        return make_sphere(float(arg))
    if kind == "cylinder":
        return make_cylinder(
            float(arg["radius"]), float(arg["height"]), int(arg.get("segments", 24))
        )
    raise MeshError(f"unknown mesh kind {kind!r}")
