"""Rigid-body math, twist parametrization, camera model and mesh handling.

Conventions used throughout the package:
  * model and camera coordinates are in meters,
  * the camera looks along +Z, x right, y down,
  * pixel centers sit at integer coordinates, origin at the top-left,
  * twists are ordered [w1, w2, w3, v1, v2, v3] (rotation first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMesh, PointBehindCamera

_SMALL_ANGLE = 1e-8


def skew(w: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True)
class Twist:
    """Tangent-space coordinates of a rigid motion: omega in rad, nu in m."""

    omega: np.ndarray
    nu: np.ndarray

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3].copy(), xi[3:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.nu])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element mapping model coordinates to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "RigidTransform":
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (n,3) array (or single 3-vector) of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = pts @ self.rotation.T + self.translation
        return out[0] if np.asarray(points).ndim == 1 else out

    def orthonormality_drift(self) -> float:
        r = self.rotation
        return float(np.linalg.norm(r.T @ r - np.eye(3)))


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    # polar projection; keeps det = +1 for inputs near SO(3)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def exp_rotation(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a second-order series below the small-angle cutoff."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def log_rotation(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, with stable pi and zero branches."""
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        # first order: R ~ I + skew(w)
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        m = 0.5 * (r + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = m[:, i] / axis[i]
            axis = axis / np.linalg.norm(axis)
        # fix the sign using the skew part where it is nonzero
        s = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if np.dot(s, axis) < 0:
            axis = -axis
        return theta * axis
    factor = theta / (2.0 * np.sin(theta))
    return factor * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])


def exp_twist(xi: Twist) -> RigidTransform:
    """Closed-form exponential map from twist coordinates to SE(3)."""
    w = np.asarray(xi.omega, dtype=float)
    v = np.asarray(xi.nu, dtype=float)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < _SMALL_ANGLE:
        rot = np.eye(3) + k + 0.5 * (k @ k)
        vmat = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
        c = (theta - np.sin(theta)) / (theta ** 3)
        rot = np.eye(3) + a * k + b * (k @ k)
        vmat = np.eye(3) + b * k + c * (k @ k)
    return RigidTransform(rot, vmat @ v)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a . b with the rotation re-projected onto SO(3) to stop drift."""
    rot = _nearest_rotation(a.rotation @ b.rotation)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(rot, t)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def relative_twist_norm(a: RigidTransform, b: RigidTransform) -> float:
    """Magnitude of the twist taking pose a to pose b (rotation rad + translation m)."""
    delta = compose(b, invert(a))
    w = log_rotation(delta.rotation)
    return float(np.sqrt(np.dot(w, w) + np.dot(delta.translation, delta.translation)))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters; fx, fy, cx, cy in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project(k: CameraIntrinsics, t: RigidTransform, x3d: np.ndarray) -> np.ndarray:
    """Pixel coordinates of one model point; raises PointBehindCamera for Z' <= 0."""
    p = t.apply(np.asarray(x3d, dtype=float))
    if p[2] <= 0.0:
        raise PointBehindCamera(f"point has camera depth {p[2]:.6g}")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def project_points(k: CameraIntrinsics, t: RigidTransform, pts: np.ndarray):
    """Vectorized projection. Returns (n,2) pixels and a validity mask (Z' > 0)."""
    cam = t.apply(np.asarray(pts, dtype=float))
    cam = np.atleast_2d(cam)
    z = cam[:, 2]
    valid = z > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy], axis=1)
    return px, valid


def metric_depth(depth_value, z_near: float, z_far: float):
    """Convert normalized z-buffer values in [0,1] to metric depth."""
    d = np.asarray(depth_value, dtype=float)
    out = z_near * z_far / (z_far - d * (z_far - z_near))
    return float(out) if np.isscalar(depth_value) else out


def normalized_depth(z, z_near: float, z_far: float):
    """Inverse of metric_depth: metric camera depth to z-buffer value."""
    z = np.asarray(z, dtype=float)
    out = z_far * (z - z_near) / (z * (z_far - z_near))
    return out


def backproject(x: np.ndarray, depth_value: float, k: CameraIntrinsics,
                z_near: float, z_far: float) -> np.ndarray:
    """Camera-space point for a pixel and its normalized depth buffer value."""
    d = metric_depth(depth_value, z_near, z_far)
    return np.array([(x[0] - k.cx) / k.fx * d, (x[1] - k.cy) / k.fy * d, d])


def scale_intrinsics(k: CameraIntrinsics, level: int) -> CameraIntrinsics:
    """Camera for pyramid level 1, 2 or 3 (full, half, quarter resolution)."""
    if level not in (1, 2, 3):
        raise ValueError(f"pyramid level must be 1, 2 or 3, got {level}")
    f = 2.0 ** (1 - level)
    return CameraIntrinsics(k.fx * f, k.fy * f, k.cx * f, k.cy * f,
                            int(k.width * f), int(k.height * f))


def mesh_diameter(vertices: np.ndarray) -> float:
    """Largest pairwise vertex distance; goes through the convex hull for big meshes."""
    pts = np.asarray(vertices, dtype=float)
    if len(pts) < 2:
        return 0.0
    if len(pts) > 1500:
        from scipy.spatial import ConvexHull

        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:
            pass  # degenerate (planar/collinear) input: fall through to direct search
    best = 0.0
    for i in range(len(pts) - 1):
        d2 = np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1)
        m = float(d2.max())
        if m > best:
            best = m
    return float(np.sqrt(best))


@dataclass
class TriangleMesh:
    """Triangle mesh in meters. diameter is the largest inter-vertex distance."""

    vertices: np.ndarray
    triangles: np.ndarray
    diameter: float = field(default=-1.0)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")
        if self.diameter < 0:
            self.diameter = mesh_diameter(self.vertices)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bounding_box_corners(self) -> np.ndarray:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return np.array([[x, y, z] for x in (lo[0], hi[0])
                         for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def decimate_mesh(full: TriangleMesh, max_vertices: int, seed: int = 0) -> TriangleMesh:
    """Evenly-sampled vertex subset for histogram anchoring.

    Candidates are the original vertices plus area-weighted random surface
    samples; farthest-point selection then picks max_vertices of them. The
    result is a point set (no triangles) unless the input is already small
    enough, in which case it is returned unchanged.
    """
    if max_vertices < 4:
        raise ValueError("max_vertices must be at least 4")
    if full.num_vertices == 0:
        raise DegenerateMesh("cannot decimate an empty mesh")
    if full.num_vertices <= max_vertices:
        return full

    candidates = full.vertices
    if full.triangles.size:
        extra = max(0, 3 * max_vertices - full.num_vertices)
        if extra:
            rng = np.random.default_rng(seed)
            areas = full.triangle_areas()
            total = areas.sum()
            if total > 0:
                tri = rng.choice(len(areas), size=extra, p=areas / total)
                u = np.sqrt(rng.random(extra))
                v = rng.random(extra)
                a = full.vertices[full.triangles[tri, 0]]
                b = full.vertices[full.triangles[tri, 1]]
                c = full.vertices[full.triangles[tri, 2]]
                samples = (1 - u)[:, None] * a + (u * (1 - v))[:, None] * b + (u * v)[:, None] * c
                candidates = np.vstack([candidates, samples])

    centroid = candidates.mean(axis=0)
    start = int(np.argmax(np.sum((candidates - centroid) ** 2, axis=1)))
    chosen = np.empty(max_vertices, dtype=np.int64)
    chosen[0] = start
    dist = np.sum((candidates - candidates[start]) ** 2, axis=1)
    for i in range(1, max_vertices):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, np.sum((candidates - candidates[nxt]) ** 2, axis=1), out=dist)
    return TriangleMesh(candidates[chosen], np.zeros((0, 3), dtype=np.int32))


@dataclass
class MeshPair:
    """Full mesh for rendering plus a reduced one for histogram anchoring."""

    full: TriangleMesh
    reduced: TriangleMesh

    @classmethod
    def from_mesh(cls, full: TriangleMesh, max_vertices: int = 5000, seed: int = 0) -> "MeshPair":
        return cls(full, decimate_mesh(full, max_vertices, seed=seed))


def load_obj(path) -> TriangleMesh:
    """Minimal OBJ reader: `v x y z` and `f i j k` lines (1-based indices).

    Face entries of the form i/t/n are accepted by taking the leading vertex
    index; every other line type is ignored. Units are interpreted as meters.
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex line needs 3 coordinates")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangular faces are supported")
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    if not vertices:
        raise DegenerateMesh(f"{path}: no vertices found")
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int32).reshape(-1, 3))


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def make_cube(side: float = 0.1, subdivisions: int = 1) -> TriangleMesh:
    """Axis-aligned cube centered at the origin with outward-wound faces.

    Each face is a (subdivisions x subdivisions) grid; vertices are shared
    within a face but duplicated across faces so per-face attributes stay flat.
    """
    h = side / 2.0
    verts = []
    tris = []
    # face frames: origin corner, u axis, v axis (outward normal = u x v)
    faces = [
        ((-h, -h, -h), (0, side, 0), (side, 0, 0)),   # -z
        ((-h, -h, +h), (side, 0, 0), (0, side, 0)),   # +z
        ((-h, -h, -h), (side, 0, 0), (0, 0, side)),   # -y
        ((-h, +h, -h), (0, 0, side), (side, 0, 0)),   # +y
        ((-h, -h, -h), (0, 0, side), (0, side, 0)),   # -x
        ((+h, -h, -h), (0, side, 0), (0, 0, side)),   # +x
    ]
    n = subdivisions
    for origin, ua, va in faces:
        base = len(verts)
        o = np.array(origin, dtype=float)
        u = np.array(ua, dtype=float) / n
        v = np.array(va, dtype=float) / n
        for j in range(n + 1):
            for i in range(n + 1):
                verts.append(o + i * u + j * v)
        for j in range(n):
            for i in range(n):
                p0 = base + j * (n + 1) + i
                p1 = p0 + 1
                p2 = p0 + (n + 1)
                p3 = p2 + 1
                tris.append([p0, p1, p2])
                tris.append([p1, p3, p2])
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int32))


def make_icosphere(radius: float = 0.05, subdivisions: int = 2) -> TriangleMesh:
    """Icosahedron subdivided and reprojected onto the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts[0])
    tris = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_tris = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m = m / np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        tris = new_tris
    return TriangleMesh(np.array(verts) * radius, np.array(tris, dtype=np.int32))
