"""Self-check utilities: synthetic single-frame scenes and a numeric
Jacobian check comparing the analytic rows against central finite
differences of the banded residual.

The differencing follows the optimizer's sign convention: the level-set
field moves with the object, so a twist perturbation displaces the sampling
point of the frozen field by the negative of the surface point's projected
displacement. phi is sampled bilinearly between pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (CameraIntrinsics, MeshPair, RigidTransform, Twist, exp_rotation,
                       exp_twist, make_cube, make_icosphere, metric_depth)
from .level_set import sdf_gradient_maps, signed_distance_transform
from .optimizer import (OptimizationSettings, _jacobian_rows, mixture,
                        normalize_posterior_pair)
from .rasterizer import render_reverse_depth, render_scene
from .segmentation import (TclcModel, averaged_posterior_maps, compute_region_etas,
                           quantize_colors, select_centers, update_model)
from .synth import ColoredMesh, composite, make_textured_background, make_two_tone_cube, shade


@dataclass
class SyntheticScene:
    """One rendered frame with an initialized appearance model at gt pose."""

    k: CameraIntrinsics
    mesh_pair: MeshPair
    pose: RigidTransform
    frame: np.ndarray
    model: TclcModel
    active: object
    mask: np.ndarray
    depth: np.ndarray
    reverse: np.ndarray
    field: object
    settings: OptimizationSettings


def build_scene(seed: int = 0, size: int = 64, radius: float = 10.0,
                center_lambda: float = 0.5) -> SyntheticScene:
    """Random cube/sphere scene over a textured background, model initialized."""
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics(fx=1.1 * size, fy=1.1 * size, cx=size / 2, cy=size / 2,
                         width=size, height=size)
    if seed % 2 == 0:
        colored = make_two_tone_cube(0.12, subdivisions=3)
    else:
        sphere = make_icosphere(0.07, subdivisions=2)
        colors = np.tile([0.75, 0.3, 0.2], (sphere.num_vertices, 1))
        colors[sphere.vertices[:, 1] > 0] = [0.25, 0.6, 0.3]
        colored = ColoredMesh(sphere, colors)
    mesh_pair = MeshPair.from_mesh(colored.mesh)
    rotvec = rng.uniform(-1.0, 1.0, 3)
    rotvec *= rng.uniform(0, np.pi) / max(np.linalg.norm(rotvec), 1e-9)
    pose = RigidTransform(exp_rotation(rotvec),
                          np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                                    rng.uniform(0.4, 0.55)]))
    background = make_textured_background(size, size, seed=seed + 1)
    sprite, coverage = shade(colored, pose, k, np.array([0.3, -0.5, -0.8]))
    frame = composite(background, sprite, coverage, noise_sigma=0.0, seed=seed)

    settings = OptimizationSettings()
    mask, depth = render_scene([mesh_pair.full], [pose], k, settings.z_near, settings.z_far)
    reverse = render_reverse_depth(mesh_pair.full, pose, k, settings.z_near, settings.z_far)
    field = signed_distance_transform(mask, 1, settings.band)
    model = TclcModel(radius=radius)
    active = select_centers(mesh_pair.reduced, pose, k, field, radius,
                            lam=center_lambda, max_count=100,
                            rng=np.random.default_rng(seed))
    compute_region_etas(field, active, radius, settings.heaviside_pitch)
    update_model(model, frame, mask, 1, active)
    return SyntheticScene(k, mesh_pair, pose, frame, model, active, mask, depth,
                          reverse, field, settings)


def bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a float image at fractional pixel coordinates."""
    h, w = img.shape
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
            + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])


def _scene_pixels(scene: SyntheticScene):
    """Banded, covered, well-margined pixels plus everything per-pixel."""
    k = scene.k
    bins = quantize_colors(scene.frame)
    pf_map, pb_map, cov = averaged_posterior_maps(bins, scene.model, scene.active, 1.0)
    pf_map, pb_map = normalize_posterior_pair(pf_map, pb_map)
    sel = scene.field.band_mask & (cov > 0)
    sel[:2, :] = sel[-2:, :] = False
    sel[:, :2] = sel[:, -2:] = False
    ys, xs = np.nonzero(sel)
    phi = scene.field.phi[ys, xs]
    gx_map, gy_map = sdf_gradient_maps(scene.field.phi)
    inside = phi <= 0
    rx = np.where(inside, xs, scene.field.closest_x[ys, xs])
    ry = np.where(inside, ys, scene.field.closest_y[ys, xs])
    out = {
        "xs": xs, "ys": ys, "phi": phi,
        "gx": gx_map[ys, xs], "gy": gy_map[ys, xs],
        "pf": pf_map[ys, xs], "pb": pb_map[ys, xs],
        "rx": rx, "ry": ry,
    }
    s = scene.settings
    for name, dmap in (("front", scene.depth), ("back", scene.reverse)):
        z = metric_depth(dmap[ry, rx], s.z_near, s.z_far)
        out[name] = np.stack([(rx - k.cx) / k.fx * z, (ry - k.cy) / k.fy * z, z], axis=1)
    return out


def _fd_rows(scene: SyntheticScene, px, surface_pts, pf, pb, h: float = 1e-5):
    """Finite-difference Jacobian rows for given pixels and surface points."""
    k = scene.k
    s = scene.settings.heaviside_pitch
    n = len(pf)
    rows = np.zeros((n, 6))
    base_x = k.fx * surface_pts[:, 0] / surface_pts[:, 2] + k.cx
    base_y = k.fy * surface_pts[:, 1] / surface_pts[:, 2] + k.cy
    for d in range(6):
        f_signed = []
        for sign in (+1.0, -1.0):
            xi = np.zeros(6)
            xi[d] = sign * h
            delta = exp_twist(Twist.from_vector(xi))
            moved = surface_pts @ delta.rotation.T + delta.translation
            mx = k.fx * moved[:, 0] / moved[:, 2] + k.cx
            my = k.fy * moved[:, 1] / moved[:, 2] + k.cy
            # field advects with the object: sample opposite the displacement
            sample_x = px[0] - (mx - base_x)
            sample_y = px[1] - (my - base_y)
            phi = bilinear(scene.field.phi, sample_x, sample_y)
            f_signed.append(-np.log(mixture(pf, pb, phi, s)))
        rows[:, d] = (f_signed[0] - f_signed[1]) / (2.0 * h)
    return rows


def jacobian_stats(seed: int = 0, size: int = 64, sign_flip: bool = False) -> dict:
    """Relative error statistics: analytic vs finite-difference rows.

    Only well-conditioned pixels count (|grad phi| > 0.5, valid depth).
    sign_flip negates the analytic rows; used to prove the check can fail.
    """
    scene = build_scene(seed, size)
    data = _scene_pixels(scene)
    k, s = scene.k, scene.settings.heaviside_pitch
    errors = []
    for key in ("front", "back"):
        pts = data[key]
        good = (np.hypot(data["gx"], data["gy"]) > 0.5) & (pts[:, 2] > scene.settings.z_near)
        if not good.any():
            continue
        analytic = _jacobian_rows(data["gx"][good], data["gy"][good], data["pf"][good],
                                  data["pb"][good], data["phi"][good],
                                  pts[good, 0], pts[good, 1], pts[good, 2], k, s)
        if sign_flip:
            analytic = -analytic
        fd = _fd_rows(scene, (data["xs"][good].astype(float), data["ys"][good].astype(float)),
                      pts[good], data["pf"][good], data["pb"][good])
        num = np.linalg.norm(analytic - fd, axis=1)
        den = np.maximum(np.linalg.norm(analytic, axis=1), np.linalg.norm(fd, axis=1))
        rel = np.where(den < 1e-12, 0.0, num / np.maximum(den, 1e-300))
        errors.append(rel)
    rel = np.concatenate(errors) if errors else np.array([np.inf])
    return {
        "pixels": int(rel.size),
        "median": float(np.median(rel)),
        "p99": float(np.quantile(rel, 0.99)),
        "max": float(rel.max()),
    }
