"""Software z-buffer rasterizer producing per-pixel depth and visibility maps.

A pixel is covered when its center (integer coordinates, matching the
projection convention in geom) lies inside the projected triangle, with the
top-left rule breaking ties on edges. Stored depth is camera-space z,
perspective-correct via 1/z interpolation. Triangles are clipped against a
near plane at 1 mm; anything fully behind it is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import CameraIntrinsics, ObjectModel, Pose

NEAR_MM = 1.0


@dataclass(frozen=True)
class DistanceMap:
    """Per-pixel camera-space depth (mm, 0 = background) plus visibility mask."""

    width: int
    height: int
    depth: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        if self.depth.shape != (self.height, self.width) or self.visible.shape != self.depth.shape:
            raise ValueError("depth/visible shape must be (height, width)")
        if not np.array_equal(self.visible, self.depth > 0):
            raise ValueError("visible mask must equal depth > 0")
        self.depth.setflags(write=False)
        self.visible.setflags(write=False)

    @staticmethod
    def from_depth(depth: np.ndarray) -> "DistanceMap":
        d = np.asarray(depth, dtype=np.float64)
        return DistanceMap(d.shape[1], d.shape[0], d, d > 0)


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a camera-space triangle against z >= near.

    Returns the clipped polygon fan-split into triangles (0, 1, or 2 of them).
    """
    out = []
    n = len(tri)
    for i in range(n):
        a, b = tri[i], tri[(i + 1) % n]
        a_in, b_in = a[2] >= near, b[2] >= near
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    if len(out) < 3:
        return []
    return [np.array([out[0], out[i], out[i + 1]]) for i in range(1, len(out) - 1)]


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def render_distance_map(model: ObjectModel, pose: Pose, camera: CameraIntrinsics) -> DistanceMap:
    """Rasterize the posed mesh into a DistanceMap under `camera`."""
    h, w = camera.height, camera.width
    zbuf = np.full((h, w), np.inf)
    cam_pts = pose.transform(model.vertices) if len(model.vertices) else np.zeros((0, 3))

    for tri_idx in model.triangles:
        for tri in _clip_near(cam_pts[tri_idx], NEAR_MM):
            _raster_triangle(tri, camera, zbuf)

    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return DistanceMap(w, h, depth, depth > 0)


def _raster_triangle(tri: np.ndarray, camera: CameraIntrinsics, zbuf: np.ndarray) -> None:
    z = tri[:, 2]
    px = camera.fx * tri[:, 0] / z + camera.cx
    py = camera.fy * tri[:, 1] / z + camera.cy

    # consistent winding: make the doubled signed area positive
    area2 = _edge(px[0], py[0], px[1], py[1], px[2], py[2])
    if area2 == 0.0:
        return
    if area2 < 0.0:
        px, py, z = px[[0, 2, 1]], py[[0, 2, 1]], z[[0, 2, 1]]
        area2 = -area2

    h, w = zbuf.shape
    x0 = max(int(np.ceil(px.min())), 0)
    x1 = min(int(np.floor(px.max())), w - 1)
    y0 = max(int(np.ceil(py.min())), 0)
    y1 = min(int(np.floor(py.max())), h - 1)
    if x0 > x1 or y0 > y1:
        return

    gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64), np.arange(y0, y1 + 1, dtype=np.float64))
    w0 = _edge(px[1], py[1], px[2], py[2], gx, gy)
    w1 = _edge(px[2], py[2], px[0], py[0], gx, gy)
    w2 = _edge(px[0], py[0], px[1], py[1], gx, gy)

    # top-left tie rule (y grows downward): horizontal edge running +x is a
    # top edge, an upward edge is a left edge; only those own their pixels
    def owns(axi, ayi, bxi, byi):
        dx, dy = bxi - axi, byi - ayi
        return (dy == 0.0 and dx > 0.0) or dy < 0.0

    cover = (
        ((w0 > 0) | ((w0 == 0) & owns(px[1], py[1], px[2], py[2])))
        & ((w1 > 0) | ((w1 == 0) & owns(px[2], py[2], px[0], py[0])))
        & ((w2 > 0) | ((w2 == 0) & owns(px[0], py[0], px[1], py[1])))
    )
    if not cover.any():
        return

    inv_z = (w0 / area2) / z[0] + (w1 / area2) / z[1] + (w2 / area2) / z[2]
    with np.errstate(divide="ignore"):
        depth = 1.0 / inv_z
    window = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    np.copyto(window, depth, where=cover & (depth < window))


def write_pgm(dmap: DistanceMap, path) -> None:
    """Debug dump: 16-bit P2 PGM with depth rounded to whole millimeters."""
    q = np.clip(np.rint(dmap.depth), 0, 65535).astype(np.int64)
    lines = [f"P2\n{dmap.width} {dmap.height}\n65535"]
    lines += [" ".join(str(v) for v in row) for row in q]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
