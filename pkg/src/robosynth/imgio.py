"""Deterministic image and point-cloud IO.

PNG via Pillow: 8-bit RGB for color/normal visualizations, 16-bit
grayscale for depth and id masks. ASCII PLY for labeled point clouds
(x y z instance_id class_id per vertex, 6-decimal coordinates).
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def png_bytes(arr: np.ndarray) -> bytes:
    """Encode an image array (uint8 HxWx3 or uint16 HxW) as PNG bytes."""
    if arr.dtype == np.uint8 and arr.ndim == 3:
        im = Image.fromarray(arr, mode="RGB")
    elif arr.dtype == np.uint16 and arr.ndim == 2:
        im = Image.fromarray(arr)
    else:
        raise ValueError(f"unsupported image array {arr.dtype} shape {arr.shape}")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(png_bytes(arr))


def read_png(path: str) -> np.ndarray:
    im = Image.open(path)
    arr = np.asarray(im)
    if arr.dtype == np.int32:  # Pillow widens some 16-bit grays
        arr = arr.astype(np.uint16)
    return arr


def write_ply(path: str, points: np.ndarray, instance_ids: np.ndarray,
              class_ids: np.ndarray) -> None:
    """ASCII PLY with per-vertex instance/class labels."""
    n = len(points)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property ushort instance_id",
        "property ushort class_id",
        "end_header",
    ]
    for i in range(n):
        x, y, z = points[i]
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {int(instance_ids[i])} {int(class_ids[i])}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_ply(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read back a PLY written by :func:`write_ply` (tests and demos)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        start = lines.index("end_header") + 1
    except ValueError:
        raise ValueError(f"{path}: not a PLY produced by write_ply") from None
    pts, iids, cids = [], [], []
    for ln in lines[start:]:
        parts = ln.split()
        if len(parts) != 5:
            continue
        pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
        iids.append(int(parts[3]))
        cids.append(int(parts[4]))
    return (
        np.asarray(pts, dtype=np.float64).reshape(-1, 3),
        np.asarray(iids, dtype=np.uint16),
        np.asarray(cids, dtype=np.uint16),
    )
