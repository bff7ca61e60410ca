"""Semi-synthetic sequence generation: shaded model renderings composited
onto background images, with exact ground-truth poses.

Sequence directory layout (consumed by evaluate.load_sequence):
    frames/%06d.png   8-bit RGB frames
    poses.txt         per frame, one line per object:
                      id r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz
    camera.txt        fx fy cx cy width height
    mesh.obj          full mesh of the primary object (convenience copy)
    meta.txt          key=value flags (variant, seed, ...)
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, NotVisible
from .geometry import (CameraIntrinsics, MeshPair, RigidTransform, TriangleMesh,
                       exp_rotation, log_rotation, save_obj)
from .rasterizer import DEFAULT_Z_FAR, DEFAULT_Z_NEAR, _rasterize_triangle, _screen_triangles

AMBIENT = 0.2
BLUR_SIGMA = 0.85


@dataclass
class ColoredMesh:
    """Triangle mesh with a per-vertex albedo in [0, 1]."""

    mesh: TriangleMesh
    colors: np.ndarray

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if len(self.colors) != self.mesh.num_vertices:
            raise ValueError("one color per vertex required")


@dataclass
class TrajectorySpec:
    """Keyframed 6DOF motion; slerp for rotation, lerp for translation."""

    keyframes: List[Tuple[int, RigidTransform]]

    def __post_init__(self):
        idx = [f for f, _ in self.keyframes]
        if not idx or idx[0] != 0:
            raise ValueError("first keyframe must be at frame 0")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("keyframe indices must be strictly increasing")

    @property
    def last_frame(self) -> int:
        return self.keyframes[-1][0]

    def pose_at(self, frame: int) -> RigidTransform:
        keys = self.keyframes
        if frame <= 0:
            return keys[0][1]
        if frame >= keys[-1][0]:
            return keys[-1][1]
        hi = next(i for i, (f, _) in enumerate(keys) if f > frame)
        f0, t0 = keys[hi - 1]
        f1, t1 = keys[hi]
        u = (frame - f0) / (f1 - f0)
        delta = log_rotation(t0.rotation.T @ t1.rotation)
        rot = t0.rotation @ exp_rotation(u * delta)
        trans = (1.0 - u) * t0.translation + u * t1.translation
        return RigidTransform(rot, trans)


@dataclass
class SequenceVariant:
    """Complexity flags of a generated sequence."""

    name: str = "regular"
    dynamic_light: bool = False
    noise_sigma: float = 0.0
    occluder: Optional[Tuple["ColoredMesh", TrajectorySpec]] = None

    def __post_init__(self):
        if self.name in ("regular", "dynlight") and self.noise_sigma != 0.0:
            raise ValueError(f"variant {self.name!r} must have zero noise")


def _render_shaded(colored: Sequence[ColoredMesh], poses, k: CameraIntrinsics,
                   light_direction, z_near=DEFAULT_Z_NEAR, z_far=DEFAULT_Z_FAR):
    """Lambertian flat-shaded render of several meshes with mutual depth tests.

    Returns float RGB in [0,1] and the coverage mask.
    """
    light = np.asarray(light_direction, dtype=float)
    light = light / np.linalg.norm(light)
    rgb = np.zeros((k.height, k.width, 3))
    depth = np.full((k.height, k.width), np.inf)
    covered = np.zeros((k.height, k.width), dtype=bool)
    for cm, pose in zip(colored, poses):
        mesh = cm.mesh
        st = _screen_triangles(mesh, pose, k, z_near)
        if st is None:
            continue
        sx, sy, inv_z, tri, tri_orig = st
        # flat normals in camera space, from the model's outward winding
        a = mesh.vertices[tri_orig[:, 0]]
        b = mesh.vertices[tri_orig[:, 1]]
        c = mesh.vertices[tri_orig[:, 2]]
        n_model = np.cross(b - a, c - a)
        n_cam = (pose.rotation @ n_model.T).T
        norms = np.linalg.norm(n_cam, axis=1)
        norms[norms == 0] = 1.0
        n_cam /= norms[:, None]
        for ti, t in enumerate(tri):
            r = _rasterize_triangle(sx[t], sy[t], inv_z[t], k.width, k.height)
            if r is None:
                continue
            ys, xs, w, (e0, e1, e2, ssum) = r
            z = 1.0 / w
            better = z < depth[ys, xs]
            if not better.any():
                continue
            ys, xs, z = ys[better], xs[better], z[better]
            w0 = (e0[better] / ssum[better])[:, None]
            w1 = (e1[better] / ssum[better])[:, None]
            w2 = (e2[better] / ssum[better])[:, None]
            albedo = w0 * cm.colors[t[0]] + w1 * cm.colors[t[1]] + w2 * cm.colors[t[2]]
            shade_factor = max(AMBIENT, float(np.dot(n_cam[ti], light)))
            rgb[ys, xs] = np.clip(albedo * shade_factor, 0.0, 1.0)
            depth[ys, xs] = z
            covered[ys, xs] = True
    return rgb, covered


def shade(colored: ColoredMesh, pose: RigidTransform, k: CameraIntrinsics,
          light_direction) -> Tuple[np.ndarray, np.ndarray]:
    """Shaded sprite of one mesh: albedo * max(0.2, n.l) with flat normals."""
    rgb, covered = _render_shaded([colored], [pose], k, light_direction)
    if not covered.any():
        raise NotVisible("mesh projects to no pixel")
    sprite = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    return sprite, covered


def _gaussian3x3(img: np.ndarray) -> np.ndarray:
    d = np.exp(-np.array([0.0, 1.0, 2.0]) / (2.0 * BLUR_SIGMA ** 2))
    kern = np.array([[d[2], d[1], d[2]], [d[1], d[0], d[1]], [d[2], d[1], d[2]]])
    kern /= kern.sum()
    padded = np.pad(img.astype(float), ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(img, dtype=float)
    for dy in range(3):
        for dx in range(3):
            out += kern[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def composite(background: np.ndarray, sprite: np.ndarray, coverage: np.ndarray,
              noise_sigma: float, seed: int) -> np.ndarray:
    """Sprite over background, blurred across the object region, plus noise.

    The 3x3 Gaussian (sigma 0.85) touches the object region and a 1 px ring
    around it, smoothing the object/background transition; Gaussian pixel
    noise is i.i.d. per channel and clamped to [0, 255].
    """
    if background.shape != sprite.shape or coverage.shape != background.shape[:2]:
        raise DimensionMismatch(
            f"background {background.shape}, sprite {sprite.shape}, coverage {coverage.shape}")
    out = np.where(coverage[..., None], sprite, background).astype(float)
    region = _dilate(coverage)
    if region.any():
        blurred = _gaussian3x3(out)
        out[region] = blurred[region]
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, out.shape)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def _rotate_about_y(v: np.ndarray, degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]])


DEFAULT_LIGHT = np.array([0.25, -0.55, -0.8]) / np.linalg.norm([0.25, -0.55, -0.8])


def _format_pose_line(obj_id: int, t: RigidTransform) -> str:
    vals = list(t.rotation.reshape(-1)) + list(t.translation)
    return str(obj_id) + " " + " ".join(f"{v:.17g}" for v in vals)


def generate_sequence(colored: ColoredMesh, trajectory: TrajectorySpec,
                      variant: SequenceVariant, backgrounds: List[np.ndarray],
                      k: CameraIntrinsics, frames: int, out_dir, seed: int = 0,
                      light_direction=DEFAULT_LIGHT) -> str:
    """Write a full sequence directory and return its path."""
    if not backgrounds:
        raise ValueError("at least one background image required")
    if trajectory.last_frame < frames - 1:
        raise ValueError("trajectory does not cover the requested frame count")
    for bg in backgrounds:
        if bg.shape != (k.height, k.width, 3):
            raise DimensionMismatch(f"background {bg.shape} vs camera {k.height}x{k.width}")
    out_dir = str(out_dir)
    frame_dir = os.path.join(out_dir, "frames")
    os.makedirs(frame_dir, exist_ok=True)

    pose_lines = []
    for f in range(frames):
        light = _rotate_about_y(light_direction, f * 1.0) if variant.dynamic_light \
            else np.asarray(light_direction, dtype=float)
        meshes = [colored]
        poses = [trajectory.pose_at(f)]
        if variant.occluder is not None:
            occ_mesh, occ_traj = variant.occluder
            meshes.append(occ_mesh)
            poses.append(occ_traj.pose_at(f))
        rgb, covered = _render_shaded(meshes, poses, k, light)
        sprite = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
        frame_seed = int(np.random.SeedSequence([seed, f]).generate_state(1)[0])
        frame = composite(backgrounds[f % len(backgrounds)], sprite, covered,
                          variant.noise_sigma, seed=frame_seed)
        Image.fromarray(frame, mode="RGB").save(os.path.join(frame_dir, f"{f:06d}.png"))
        for obj_id, pose in enumerate(poses, start=1):
            pose_lines.append(_format_pose_line(obj_id, pose))

    with open(os.path.join(out_dir, "poses.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(pose_lines) + "\n")
    with open(os.path.join(out_dir, "camera.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}\n")
    save_obj(os.path.join(out_dir, "mesh.obj"), colored.mesh)
    with open(os.path.join(out_dir, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"variant={variant.name}\n")
        fh.write(f"dynamic_light={int(variant.dynamic_light)}\n")
        fh.write(f"noise_sigma={variant.noise_sigma:g}\n")
        fh.write(f"seed={seed}\n")
        fh.write(f"frames={frames}\n")
        fh.write(f"objects={2 if variant.occluder is not None else 1}\n")
    return out_dir


def make_two_tone_cube(side: float = 0.12, subdivisions: int = 4) -> ColoredMesh:
    """Cube with alternating warm/cool faces; faces do not share vertices."""
    from .geometry import make_cube

    mesh = make_cube(side, subdivisions)
    per_face = (subdivisions + 1) ** 2
    colors = np.zeros((mesh.num_vertices, 3))
    tone_a = np.array([0.82, 0.25, 0.18])
    tone_b = np.array([0.18, 0.35, 0.8])
    for face in range(6):
        colors[face * per_face:(face + 1) * per_face] = tone_a if face % 2 == 0 else tone_b
    return ColoredMesh(mesh, colors)


def make_textured_background(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Cluttered low-frequency color field standing in for a desk scene."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.0, 1.0, size=(height // 16 + 2, width // 16 + 2, 3))
    img = ndimage.zoom(coarse, (height / coarse.shape[0], width / coarse.shape[1], 1), order=1)
    img = img[:height, :width]
    detail = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(height, width, 3)), sigma=3.0)
    img = img + 0.6 * detail
    img = (img - img.min()) / max(img.max() - img.min(), 1e-9)
    return np.clip(np.round(30 + img * 195), 0, 255).astype(np.uint8)


def default_trajectory(frames: int, distance: float = 0.55, seed: int = 0) -> TrajectorySpec:
    """Gentle wandering 6DOF motion in front of the camera."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    keys = []
    step = max(1, frames // 25)
    for f in range(0, frames + step, step):
        u = f / max(frames, 1)
        trans = np.array([
            0.045 * np.sin(2 * np.pi * u + phase[0]),
            0.035 * np.sin(4 * np.pi * u + phase[1]),
            distance + 0.06 * np.sin(2 * np.pi * u + phase[2]),
        ])
        rotvec = np.array([
            0.35 * np.sin(2 * np.pi * u + phase[1]),
            2 * np.pi * 0.25 * u,
            0.3 * np.sin(4 * np.pi * u + phase[2]),
        ])
        keys.append((f, RigidTransform(exp_rotation(rotvec), trans)))
    return TrajectorySpec(keys)


def orbit_trajectory(frames: int, center_distance: float = 0.55, radius: float = 0.13,
                     depth_offset: float = -0.18, cycles: float = 1.0) -> TrajectorySpec:
    """Occluder path sweeping through the line of sight of the main object."""
    keys = []
    step = max(1, frames // 50)
    for f in range(0, frames + step, step):
        a = 2 * np.pi * cycles * f / max(frames, 1)
        trans = np.array([radius * np.cos(a), 0.02 * np.sin(2 * a),
                          center_distance + depth_offset])
        keys.append((f, RigidTransform(exp_rotation(np.array([0.0, a, 0.0])), trans)))
    return TrajectorySpec(keys)


def make_variant(name: str, frames: int, noise_sigma: float = 8.0,
                 occluder_side: float = 0.07) -> SequenceVariant:
    """Canonical variant presets: regular, dynlight, noisy, occlusion."""
    if name == "regular":
        return SequenceVariant("regular")
    if name == "dynlight":
        return SequenceVariant("dynlight", dynamic_light=True)
    if name == "noisy":
        return SequenceVariant("noisy", dynamic_light=True, noise_sigma=noise_sigma)
    if name == "occlusion":
        occ = make_two_tone_cube(occluder_side, subdivisions=3)
        occ.colors[:] = np.array([0.15, 0.75, 0.3])
        return SequenceVariant("occlusion", dynamic_light=True,
                               occluder=(occ, orbit_trajectory(frames)))
    raise ValueError(f"unknown variant {name!r}")
