"""Deterministic software rendering of silhouette masks and depth maps.

Coverage follows a fixed fill rule so that adjacent triangles partition edge
pixels without gaps or double hits: a pixel exactly on an edge a->b belongs to
the triangle iff the edge descends (dy > 0) or is horizontal and points right
(dy == 0, dx > 0), with triangles rewound to positive signed area in the
x-right / y-down pixel frame. Depth is interpolated linearly in 1/Z (exactly
what a hardware z-buffer does) and stored normalized to [0, 1] with 1 meaning
"no hit".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidFrustum, NotVisible
from .geometry import CameraIntrinsics, RigidTransform, TriangleMesh, project_points

DEFAULT_Z_NEAR = 0.01
DEFAULT_Z_FAR = 100.0


@dataclass
class RegionOfInterest:
    """Pixel bounds, inclusive-exclusive, clipped to the image."""

    x0: int
    y0: int
    x1: int
    y1: int


def roi_area(roi: RegionOfInterest) -> int:
    return max(0, roi.x1 - roi.x0) * max(0, roi.y1 - roi.y0)


def _check_frustum(z_near: float, z_far: float) -> None:
    if z_near <= 0.0 or z_near >= z_far:
        raise InvalidFrustum(f"invalid frustum z_near={z_near} z_far={z_far}")


def _screen_triangles(mesh: TriangleMesh, pose: RigidTransform, k: CameraIntrinsics,
                      z_near: float):
    """Screen-space vertices, inverse depths and kept-triangle indices.

    Triangles with any vertex at or in front of the near plane are dropped;
    the remaining ones are rewound to positive signed area. The last element
    of the tuple is the kept triangle list in its original winding (shading
    needs the model's outward normals).
    """
    cam = pose.apply(mesh.vertices)
    cam = np.atleast_2d(cam)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = k.fx * cam[:, 0] / z + k.cx
        sy = k.fy * cam[:, 1] / z + k.cy
        inv_z = 1.0 / z
    tri = mesh.triangles
    if tri.size == 0:
        return None
    keep = np.all(z[tri] > z_near, axis=1)
    tri = tri[keep]
    if tri.size == 0:
        return None
    ax, ay = sx[tri[:, 0]], sy[tri[:, 0]]
    bx, by = sx[tri[:, 1]], sy[tri[:, 1]]
    cx_, cy_ = sx[tri[:, 2]], sy[tri[:, 2]]
    area2 = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)
    original = tri[area2 != 0]
    flip = area2 < 0
    tri = tri.copy()
    tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()
    return sx, sy, inv_z, tri[area2 != 0], original


def _edge(ax, ay, bx, by, px, py):
    """Signed edge function; positive inside for positive-area triangles."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _edge_accepts_zero(ax, ay, bx, by):
    dy = by - ay
    dx = bx - ax
    return (dy > 0) | ((dy == 0) & (dx > 0))


def _rasterize_triangle(vx, vy, viz, width, height):
    """Coverage and interpolated 1/Z for one triangle.

    Returns (ys, xs, inv_z) index arrays restricted to the triangle bbox, or
    None when nothing is covered.
    """
    x0 = max(0, int(np.ceil(min(vx))))
    x1 = min(width - 1, int(np.floor(max(vx))))
    y0 = max(0, int(np.ceil(min(vy))))
    y1 = min(height - 1, int(np.floor(max(vy))))
    if x0 > x1 or y0 > y1:
        return None
    px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=float),
                         np.arange(y0, y1 + 1, dtype=float))
    e0 = _edge(vx[1], vy[1], vx[2], vy[2], px, py)
    e1 = _edge(vx[2], vy[2], vx[0], vy[0], px, py)
    e2 = _edge(vx[0], vy[0], vx[1], vy[1], px, py)
    inside = ((e0 > 0) | ((e0 == 0) & _edge_accepts_zero(vx[1], vy[1], vx[2], vy[2]))) \
        & ((e1 > 0) | ((e1 == 0) & _edge_accepts_zero(vx[2], vy[2], vx[0], vy[0]))) \
        & ((e2 > 0) | ((e2 == 0) & _edge_accepts_zero(vx[0], vy[0], vx[1], vy[1])))
    if not inside.any():
        return None
    s = e0 + e1 + e2
    inv_z = (e0 * viz[0] + e1 * viz[1] + e2 * viz[2]) / s
    ys, xs = np.nonzero(inside)
    return ys + y0, xs + x0, inv_z[ys, xs], (e0[ys, xs], e1[ys, xs], e2[ys, xs], s[ys, xs])


def render_scene(meshes, poses, k: CameraIntrinsics,
                 z_near: float = DEFAULT_Z_NEAR, z_far: float = DEFAULT_Z_FAR):
    """Common silhouette index mask and normalized depth map.

    Object j (1-based) wins a pixel when its surface is strictly nearer than
    anything drawn before it; ties keep the earlier object.
    """
    _check_frustum(z_near, z_far)
    mask = np.zeros((k.height, k.width), dtype=np.uint8)
    depth = np.ones((k.height, k.width), dtype=float)
    scale = z_far / (z_far - z_near)
    for j, (mesh, pose) in enumerate(zip(meshes, poses), start=1):
        st = _screen_triangles(mesh, pose, k, z_near)
        if st is None:
            continue
        sx, sy, inv_z, tri, _ = st
        for t in tri:
            r = _rasterize_triangle(sx[t], sy[t], inv_z[t], k.width, k.height)
            if r is None:
                continue
            ys, xs, w, _ = r
            d = scale * (1.0 - z_near * w)
            better = d < depth[ys, xs]
            if better.any():
                mask[ys[better], xs[better]] = j
                depth[ys[better], xs[better]] = d[better]
    return mask, depth


def render_reverse_depth(mesh: TriangleMesh, pose: RigidTransform, k: CameraIntrinsics,
                         z_near: float = DEFAULT_Z_NEAR, z_far: float = DEFAULT_Z_FAR):
    """Per-pixel most distant surface depth of a single object.

    Background (never covered) pixels hold the no-hit sentinel 1.0.
    """
    _check_frustum(z_near, z_far)
    rev = np.full((k.height, k.width), -np.inf)
    scale = z_far / (z_far - z_near)
    st = _screen_triangles(mesh, pose, k, z_near)
    if st is not None:
        sx, sy, inv_z, tri, _ = st
        for t in tri:
            r = _rasterize_triangle(sx[t], sy[t], inv_z[t], k.width, k.height)
            if r is None:
                continue
            ys, xs, w, _ = r
            d = scale * (1.0 - z_near * w)
            worse = d > rev[ys, xs]
            if worse.any():
                rev[ys[worse], xs[worse]] = d[worse]
    rev[np.isneginf(rev)] = 1.0
    return rev


def compute_roi(mesh: TriangleMesh, pose: RigidTransform, k: CameraIntrinsics,
                band: int = 8) -> RegionOfInterest:
    """Projected 3D bounding-box bounds expanded by the band, clipped.

    Corners behind the camera are ignored; if all eight are, the object is
    NotVisible. Done without rendering.
    """
    corners = mesh.bounding_box_corners()
    px, valid = project_points(k, pose, corners)
    if not valid.any():
        raise NotVisible("all bounding-box corners behind the camera")
    px = px[valid]
    x0 = int(np.floor(px[:, 0].min())) - band
    x1 = int(np.ceil(px[:, 0].max())) + band + 1
    y0 = int(np.floor(px[:, 1].min())) - band
    y1 = int(np.ceil(px[:, 1].max())) + band + 1
    x0, x1 = max(0, min(x0, k.width)), max(0, min(x1, k.width))
    y0, y1 = max(0, min(y0, k.height)), max(0, min(y1, k.height))
    return RegionOfInterest(x0, y0, x1, y1)


def save_mask_png(path, mask: np.ndarray) -> None:
    """Debug dump of an index mask as 8-bit grayscale."""
    from PIL import Image

    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def save_depth_png(path, depth: np.ndarray) -> None:
    """Debug dump of a normalized depth map as 16-bit grayscale (depth * 65535)."""
    from PIL import Image

    scaled = np.clip(np.round(depth * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(scaled, mode="I;16").save(path)
