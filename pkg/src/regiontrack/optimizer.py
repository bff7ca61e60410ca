"""Reweighted Gauss-Newton pose refinement over the banded silhouette cost.

Per banded pixel the residual is F = -log(He(phi) Pf + (1 - He(phi)) Pb) and
the normal equations accumulate sum(psi J^T J) and sum(J^T) with psi = 1/F.
The per-pixel Jacobian row is

    J = (Pb - Pf) / (He(phi)(Pf - Pb) + Pb) * dirac(phi) * grad(phi) * P * G

with P the 2x3 projection derivative and G the 3x6 twist generator at the
pixel's camera-space surface point. Sign convention: the level-set field
advects with the object, so the sampling point of the frozen field moves
opposite to the surface point's projected displacement; with that residual
J is exactly dF/dxi (finite-difference verified) and the update is
xi = -(sum psi J^T J)^-1 sum J^T applied as T <- exp(xi^) T.

Every pixel contributes twice: once with the front surface point (forward
depth map) and once with the back surface point (reverse depth map); for
background pixels both depths are read at the closest contour pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import EmptyAccumulation, EmptyRegion, NotVisible, SingularSystem
from .geometry import (CameraIntrinsics, RigidTransform, TriangleMesh, Twist, compose,
                       exp_twist, metric_depth, scale_intrinsics)
from .level_set import (SignedDistanceField, sdf_gradient_maps, signed_distance_transform,
                        smoothed_dirac, smoothed_heaviside)
from .rasterizer import compute_roi, render_reverse_depth, render_scene, roi_area
from .segmentation import (ActiveRegionSet, TclcModel, averaged_posterior_maps,
                           quantize_colors)

RESIDUAL_FLOOR = 1e-12
BASE_AREA = 640.0 * 512.0


@dataclass
class OptimizationSettings:
    """Tunables of the optimizer; defaults follow the tracking recipe."""

    heaviside_pitch: float = 1.2
    band: float = 8.0
    pyramid_iterations: Sequence[int] = (4, 2, 1)  # levels 3, 2, 1
    min_roi_area: float = 3000.0                   # at 640x512, rescaled per level
    z_near: float = 0.01
    z_far: float = 100.0
    damping_scale: float = 1e-7
    occlusion_check: bool = True
    divergence_factor: float = 10.0
    max_centers: int = 100
    center_lambda: float = 0.1
    alpha_f: float = 0.1
    alpha_b: float = 0.2
    radius: Optional[float] = None  # None: 40 px scaled by width/640

    def iterations_for(self, level: int) -> int:
        return int(self.pyramid_iterations[3 - level])

    def min_area_for(self, k: CameraIntrinsics) -> float:
        return self.min_roi_area * (k.width * k.height) / BASE_AREA

    @classmethod
    def from_file(cls, path) -> "OptimizationSettings":
        """Plain key=value overrides; pyramid_iterations as comma list."""
        settings = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, value = (t.strip() for t in line.split("=", 1))
                if not hasattr(settings, key):
                    raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
                if key == "pyramid_iterations":
                    setattr(settings, key, tuple(int(v) for v in value.split(",")))
                elif key == "occlusion_check":
                    setattr(settings, key, value.lower() in ("1", "true", "yes", "on"))
                elif key in ("max_centers",):
                    setattr(settings, key, int(value))
                elif key == "radius":
                    setattr(settings, key, None if value.lower() == "none" else float(value))
                else:
                    setattr(settings, key, float(value))
        return settings


@dataclass
class NormalEquations:
    hessian_approx: np.ndarray  # (6, 6) sum(psi J^T J)
    gradient: np.ndarray        # (6,)   sum(J^T)
    pixel_count: int


@dataclass
class ObjectInput:
    """Per-object bundle handed to optimize()."""

    mesh_full: "TriangleMesh"
    model: TclcModel
    pose: RigidTransform
    active: ActiveRegionSet


@dataclass
class OptimizeResult:
    pose: RigidTransform
    diverged: bool = False
    reason: str = ""
    mean_residuals: List[float] = dc_field(default_factory=list)


def mixture(pbar_f, pbar_b, phi_value, s: float):
    """Clamped convex combination He*Pf + (1-He)*Pb."""
    he = smoothed_heaviside(phi_value, s)
    return np.clip(he * pbar_f + (1.0 - he) * pbar_b, RESIDUAL_FLOOR, 1.0 - RESIDUAL_FLOOR)


def normalize_posterior_pair(pbar_f, pbar_b):
    """Rescale an averaged-posterior pair so it sums to one.

    The averaged posteriors carry an arbitrary 1/eta scale; the residual
    needs O(1) memberships so that F vanishes for perfectly explained pixels
    and psi = 1/F acts as an inlier weight. The Jacobian prefactor is
    invariant to this common rescaling.
    """
    total = np.asarray(pbar_f, dtype=float) + np.asarray(pbar_b, dtype=float)
    total = np.maximum(total, RESIDUAL_FLOOR)
    return pbar_f / total, pbar_b / total


def residual(pbar_f, pbar_b, phi_value, s: float):
    """Negative log of the clamped mixture."""
    return -np.log(mixture(pbar_f, pbar_b, phi_value, s))


def _jacobian_rows(gx, gy, pbar_f, pbar_b, phi, xc, yc, zc, k: CameraIntrinsics, s: float):
    """Vectorized 1x6 Jacobian rows (n, 6) for n pixels."""
    g_mix = mixture(pbar_f, pbar_b, phi, s)
    pref = (pbar_b - pbar_f) / g_mix * smoothed_dirac(phi, s)
    inv_z = 1.0 / zc
    mx = pref * gx * k.fx * inv_z
    my = pref * gy * k.fy * inv_z
    mz = -(pref * (gx * k.fx * xc + gy * k.fy * yc)) * inv_z * inv_z
    return np.stack([
        -my * zc + mz * yc,
        mx * zc - mz * xc,
        -mx * yc + my * xc,
        mx, my, mz,
    ], axis=1)


def pixel_jacobian(x, field: SignedDistanceField, pbar_f: float, pbar_b: float,
                   surface_point, k: CameraIntrinsics, s: float) -> np.ndarray:
    """Reference single-pixel Jacobian for one surface point (front or back)."""
    from .errors import DegenerateDepth
    from .level_set import sdf_gradient

    sp = np.asarray(surface_point, dtype=float)
    if sp[2] <= 1e-9:
        raise DegenerateDepth(f"surface point depth {sp[2]:.3g}")
    g = sdf_gradient(field, x)
    phi = field.phi[int(x[1]), int(x[0])]
    return _jacobian_rows(
        np.array([g[0]]), np.array([g[1]]), np.array([float(pbar_f)]),
        np.array([float(pbar_b)]), np.array([phi]),
        np.array([sp[0]]), np.array([sp[1]]), np.array([sp[2]]), k, s)[0]


def pixel_admissible(x, j: int, mask: np.ndarray, depth: np.ndarray,
                     field_j: SignedDistanceField, z_near: float, z_far: float) -> bool:
    """Occlusion test for one banded pixel of object j (reference path)."""
    px, py = int(x[0]), int(x[1])
    phi = field_j.phi[py, px]
    cx = int(field_j.closest_x[py, px])
    cy = int(field_j.closest_y[py, px])
    contour_depth = depth[cy, cx]
    h, w = mask.shape
    if phi > 0:
        m = int(mask[py, px])
        return not (m not in (0, j) and depth[py, px] < contour_depth)
    for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
        if not (0 <= nx < w and 0 <= ny < h):
            continue
        m = int(mask[ny, nx])
        if m != j and m != 0 and depth[ny, nx] < contour_depth:
            return False
    return True


def _admissible_vec(xs, ys, phi, cxs, cys, j, mask, depth):
    """Vectorized occlusion rejection; normalized depths compare like metric ones."""
    contour_depth = depth[cys, cxs]
    out = np.ones(len(xs), dtype=bool)

    outside = phi > 0
    m_at = mask[ys, xs]
    occluded_out = outside & (m_at != 0) & (m_at != j) & (depth[ys, xs] < contour_depth)
    out[occluded_out] = False

    inside = ~outside
    if inside.any():
        h, w = mask.shape
        bad = np.zeros(len(xs), dtype=bool)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx = cxs + dx
            ny = cys + dy
            ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
            nxc = np.clip(nx, 0, w - 1)
            nyc = np.clip(ny, 0, h - 1)
            m_n = mask[nyc, nxc]
            bad |= ok & (m_n != j) & (m_n != 0) & (depth[nyc, nxc] < contour_depth)
        out[inside & bad] = False
    return out


def accumulate(xs, ys, field: SignedDistanceField, pbar_f, pbar_b,
               depth: np.ndarray, reverse_depth: np.ndarray, k: CameraIntrinsics,
               s: float, z_near: float, z_far: float):
    """Normal equations from admissible banded pixels.

    Returns (NormalEquations, residuals). Front and back surface points both
    contribute a row per pixel; background pixels read both depth maps at
    their closest contour pixel.
    """
    if len(xs) == 0:
        raise EmptyAccumulation("no admissible pixel")
    phi = field.phi[ys, xs]
    gx_map, gy_map = sdf_gradient_maps(field.phi)
    gx = gx_map[ys, xs]
    gy = gy_map[ys, xs]

    inside = phi <= 0
    rx = np.where(inside, xs, field.closest_x[ys, xs])
    ry = np.where(inside, ys, field.closest_y[ys, xs])

    f_res = residual(pbar_f, pbar_b, phi, s)
    psi = 1.0 / f_res

    hess = np.zeros((6, 6))
    grad = np.zeros(6)
    n_used = 0
    for dmap in (depth, reverse_depth):
        z_met = metric_depth(dmap[ry, rx], z_near, z_far)
        good = z_met > 1e-9
        if not good.any():
            continue
        xc = (rx[good] - k.cx) / k.fx * z_met[good]
        yc = (ry[good] - k.cy) / k.fy * z_met[good]
        rows = _jacobian_rows(gx[good], gy[good], pbar_f[good], pbar_b[good],
                              phi[good], xc, yc, z_met[good], k, s)
        hess += rows.T @ (psi[good, None] * rows)
        grad += rows.sum(axis=0)
        n_used = max(n_used, int(good.sum()))
    if n_used == 0:
        raise EmptyAccumulation("all surface points degenerate")
    return NormalEquations(hess, grad, n_used), f_res


def solve_step(n: NormalEquations, damping: float) -> Twist:
    """Twist update solving (H + damping I) dxi = -g via Cholesky."""
    h = n.hessian_approx + damping * np.eye(6)
    try:
        c, low = scipy.linalg.cho_factor(h, check_finite=False)
        dxi = scipy.linalg.cho_solve((c, low), -n.gradient, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"normal equations not SPD: {exc}") from exc
    return Twist.from_vector(dxi)


def _downsample_2x(img: np.ndarray) -> np.ndarray:
    """Integer 2x2 box filter; trims odd trailing rows/columns."""
    h, w = img.shape[:2]
    img = img[: (h // 2) * 2, : (w // 2) * 2]
    s = img.astype(np.uint16)
    out = (s[0::2, 0::2] + s[1::2, 0::2] + s[0::2, 1::2] + s[1::2, 1::2] + 2) // 4
    return out.astype(np.uint8)


def frame_pyramid(frame: np.ndarray):
    """Quantized color-bin images for levels 1, 2, 3 keyed by level."""
    levels = {1: frame}
    levels[2] = _downsample_2x(frame)
    levels[3] = _downsample_2x(levels[2])
    return {lvl: quantize_colors(img) for lvl, img in levels.items()}


def optimize(frame: np.ndarray, objects: List[ObjectInput], k: CameraIntrinsics,
             settings: OptimizationSettings) -> List[OptimizeResult]:
    """Hierarchical pose refinement of all objects on one frame.

    Histogram contents, active regions and their etas stay frozen for the
    whole frame. Each iteration renders the common mask/depth plus per-object
    reverse depth maps, then updates all poses sequentially. An object whose
    ROI is too small at a level skips ahead to the next finer level; an
    object whose mean residual grows past the divergence factor within a
    level is flagged diverged and left untouched, without aborting others.
    """
    m = len(objects)
    results = [OptimizeResult(pose=obj.pose) for obj in objects]
    done = [False] * m
    bins_by_level = frame_pyramid(frame)

    for level in (3, 2, 1):
        iters = settings.iterations_for(level)
        if iters <= 0:
            continue
        k_l = scale_intrinsics(k, level)
        scale = 2.0 ** (1 - level)
        bins_l = bins_by_level[level]

        posteriors = []
        for obj in objects:
            pf_map, pb_map, cov = averaged_posterior_maps(bins_l, obj.model, obj.active, scale)
            pf_map, pb_map = normalize_posterior_pair(pf_map, pb_map)
            posteriors.append((pf_map, pb_map, cov))

        first_mean = [None] * m
        skip_level = [False] * m
        for _ in range(iters):
            if all(done[j] or skip_level[j] for j in range(m)):
                break
            meshes = [obj.mesh_full for obj in objects]
            poses = [results[j].pose for j in range(m)]
            mask, depth = render_scene(meshes, poses, k_l, settings.z_near, settings.z_far)
            reverse = [render_reverse_depth(meshes[j], poses[j], k_l,
                                            settings.z_near, settings.z_far)
                       if not done[j] and not skip_level[j] else None
                       for j in range(m)]

            for j, obj in enumerate(objects):
                if done[j] or skip_level[j]:
                    continue
                try:
                    roi = compute_roi(obj.mesh_full, results[j].pose, k_l, int(settings.band))
                except NotVisible as exc:
                    results[j].diverged = True
                    results[j].reason = f"not visible: {exc}"
                    done[j] = True
                    continue
                if roi_area(roi) < settings.min_area_for(k_l):
                    skip_level[j] = True
                    continue
                try:
                    fld = signed_distance_transform(mask, j + 1, settings.band)
                except EmptyRegion:
                    results[j].diverged = True
                    results[j].reason = "silhouette empty in rendered mask"
                    done[j] = True
                    continue

                pf_map, pb_map, cov = posteriors[j]
                sel = fld.band_mask & (cov > 0)
                sel[:1, :] = sel[-1:, :] = False
                sel[:, :1] = sel[:, -1:] = False
                sel[:roi.y0, :] = False
                sel[roi.y1:, :] = False
                sel[:, :roi.x0] = False
                sel[:, roi.x1:] = False
                ys, xs = np.nonzero(sel)
                if len(xs) == 0:
                    results[j].diverged = True
                    results[j].reason = "no usable banded pixels"
                    done[j] = True
                    continue
                if settings.occlusion_check and m > 1:
                    keep = _admissible_vec(xs, ys, fld.phi[ys, xs],
                                           fld.closest_x[ys, xs], fld.closest_y[ys, xs],
                                           j + 1, mask, depth)
                    xs, ys = xs[keep], ys[keep]

                try:
                    normal_eq, f_res = accumulate(
                        xs, ys, fld, pf_map[ys, xs], pb_map[ys, xs], depth, reverse[j],
                        k_l, settings.heaviside_pitch, settings.z_near, settings.z_far)
                except EmptyAccumulation:
                    results[j].diverged = True
                    results[j].reason = "empty accumulation"
                    done[j] = True
                    continue

                mean_res = float(f_res.mean())
                results[j].mean_residuals.append(mean_res)
                if first_mean[j] is None:
                    first_mean[j] = mean_res
                elif mean_res > settings.divergence_factor * first_mean[j]:
                    results[j].diverged = True
                    results[j].reason = (f"mean residual grew {mean_res / first_mean[j]:.1f}x "
                                         f"at level {level}")
                    done[j] = True
                    continue

                damping = settings.damping_scale * np.trace(normal_eq.hessian_approx) / 6.0
                try:
                    dxi = solve_step(normal_eq, damping)
                except SingularSystem:
                    results[j].diverged = True
                    results[j].reason = "singular normal equations"
                    done[j] = True
                    continue
                results[j].pose = compose(exp_twist(dxi), results[j].pose)
    return results
