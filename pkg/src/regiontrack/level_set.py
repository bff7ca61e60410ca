"""Contour extraction, signed Euclidean distance fields and the smoothed
Heaviside/Dirac pair used by the region cost.

The contour of an object lives on its foreground pixels: a pixel belongs to
the contour when it is inside the region and has a 4-neighbor outside it (the
image border counts as outside). phi is negative inside, positive outside,
and |phi| is the exact Euclidean distance to the nearest contour pixel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BorderPixel, EmptyRegion


@dataclass
class ContourSet:
    """Contour pixel coordinates as an (n, 2) array of (x, y)."""

    pixels: np.ndarray


@dataclass
class SignedDistanceField:
    """Exact signed distance to the contour plus closest-contour-pixel maps."""

    phi: np.ndarray        # (h, w) float, negative inside
    closest_x: np.ndarray  # (h, w) int32, x of nearest contour pixel
    closest_y: np.ndarray  # (h, w) int32
    band_mask: np.ndarray  # (h, w) bool, |phi| <= band
    band: float


def _region_and_contour(mask: np.ndarray, j: int):
    region = mask == j
    if not region.any():
        raise EmptyRegion(f"object {j} has no pixels in the mask")
    inside4 = (
        np.pad(region, 1)[:-2, 1:-1] & np.pad(region, 1)[2:, 1:-1]
        & np.pad(region, 1)[1:-1, :-2] & np.pad(region, 1)[1:-1, 2:]
    )
    contour = region & ~inside4
    return region, contour


def extract_contour(mask: np.ndarray, j: int) -> ContourSet:
    """Foreground pixels of object j with at least one 4-neighbor outside."""
    _, contour = _region_and_contour(mask, j)
    ys, xs = np.nonzero(contour)
    return ContourSet(np.stack([xs, ys], axis=1).astype(np.int32))


def signed_distance_transform(mask: np.ndarray, j: int, band: float = 8.0) -> SignedDistanceField:
    """Exact Euclidean distance transform of the object contour.

    Backed by scipy's exact EDT, which also yields the index of the nearest
    contour pixel for every location (ties broken by the scan order of the
    transform, deterministically).
    """
    region, contour = _region_and_contour(mask, j)
    dist, (iy, ix) = ndimage.distance_transform_edt(~contour, return_indices=True)
    phi = np.where(region, -dist, dist)
    phi[contour] = 0.0
    return SignedDistanceField(
        phi=phi,
        closest_x=ix.astype(np.int32),
        closest_y=iy.astype(np.int32),
        band_mask=np.abs(phi) <= band,
        band=float(band),
    )


def sdf_gradient(field: SignedDistanceField, x) -> np.ndarray:
    """Central-difference gradient of phi at integer pixel (x, y)."""
    px, py = int(x[0]), int(x[1])
    h, w = field.phi.shape
    if px < 1 or py < 1 or px > w - 2 or py > h - 2:
        raise BorderPixel(f"pixel ({px},{py}) too close to the border")
    gx = (field.phi[py, px + 1] - field.phi[py, px - 1]) * 0.5
    gy = (field.phi[py + 1, px] - field.phi[py - 1, px]) * 0.5
    return np.array([gx, gy])


def sdf_gradient_maps(phi: np.ndarray):
    """Central-difference gradients over the whole field (borders zero)."""
    gx = np.zeros_like(phi)
    gy = np.zeros_like(phi)
    gx[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) * 0.5
    gy[1:-1, :] = (phi[2:, :] - phi[:-2, :]) * 0.5
    return gx, gy


def smoothed_heaviside(phi_value, s: float):
    """Arctangent step: 1 deep inside (phi -> -inf), 0 deep outside."""
    return (-np.arctan(s * np.asarray(phi_value, dtype=float)) + np.pi / 2.0) / np.pi


def smoothed_dirac(phi_value, s: float):
    """Magnitude of the Heaviside slope: s / (pi * phi^2 * s^2 + pi)."""
    p = np.asarray(phi_value, dtype=float)
    return s / (np.pi * p * p * s * s + np.pi)


def save_sdf(path, field: SignedDistanceField, object_index: int) -> None:
    """Debug export: 16-byte header (width, height int32; band float32;
    object index int32) followed by row-major float32 phi values."""
    h, w = field.phi.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<iifi", w, h, field.band, object_index))
        fh.write(field.phi.astype("<f4").tobytes())


def load_sdf(path):
    """Inverse of save_sdf; returns (phi, band, object_index)."""
    with open(path, "rb") as fh:
        w, h, band, obj = struct.unpack("<iifi", fh.read(16))
        phi = np.frombuffer(fh.read(4 * w * h), dtype="<f4").reshape(h, w).astype(float)
    return phi, band, obj
