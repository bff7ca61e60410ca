"""Temporally consistent local color histograms.

Each reduced-mesh vertex owns a foreground/background histogram pair in RGB
space quantized to 32 bins per channel. Histograms initialize the first time
their vertex projects near the silhouette contour and are afterwards blended
with per-frame scans at fixed learning rates. Region membership weights
(eta) are the smoothed-Heaviside masses of the disc and are cached on the
active set when it is built, once per frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from typing import Dict, Optional

import numpy as np

from .errors import NoVisibleCenters, NotCovered, Uninitialized
from .geometry import CameraIntrinsics, RigidTransform, TriangleMesh, project_points
from .level_set import SignedDistanceField, smoothed_heaviside

BINS_PER_CHANNEL = 32
BIN_DIV = 256 // BINS_PER_CHANNEL
TOTAL_BINS = BINS_PER_CHANNEL ** 3
POSTERIOR_FLOOR = 1e-12


def quantize_colors(image: np.ndarray) -> np.ndarray:
    """Flat histogram bin index per pixel for an (h, w, 3) uint8 image."""
    q = image // BIN_DIV
    return (q[..., 0].astype(np.int32) * BINS_PER_CHANNEL + q[..., 1]) * BINS_PER_CHANNEL + q[..., 2]


@dataclass
class ColorHistogram:
    """32x32x32 RGB histogram; holds raw counts or normalized mass."""

    bins: np.ndarray

    @classmethod
    def empty(cls) -> "ColorHistogram":
        return cls(np.zeros((BINS_PER_CHANNEL,) * 3))

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "ColorHistogram":
        return cls(np.asarray(flat, dtype=float).reshape((BINS_PER_CHANNEL,) * 3))

    @property
    def flat(self) -> np.ndarray:
        return self.bins.reshape(-1)

    @property
    def total(self) -> float:
        return float(self.bins.sum())

    def normalized(self) -> "ColorHistogram":
        t = self.total
        if t <= 0:
            return ColorHistogram(np.zeros_like(self.bins))
        return ColorHistogram(self.bins / t)


@dataclass
class TclcHistogram:
    vertex_index: int
    fg: ColorHistogram
    bg: ColorHistogram
    initialized: bool = False


@dataclass
class TclcModel:
    """Per-object histogram collection with its region radius and learning rates."""

    radius: float = 40.0
    alpha_f: float = 0.1
    alpha_b: float = 0.2
    histograms: Dict[int, TclcHistogram] = dc_field(default_factory=dict)

    @classmethod
    def for_resolution(cls, width: int, alpha_f: float = 0.1, alpha_b: float = 0.2) -> "TclcModel":
        """Radius 40 px at 640 px width, scaled proportionally to the resolution."""
        return cls(radius=40.0 * width / 640.0, alpha_f=alpha_f, alpha_b=alpha_b)

    def initialized_count(self) -> int:
        return sum(1 for h in self.histograms.values() if h.initialized)


@dataclass
class ActiveRegionSet:
    """Histogram regions in play for the current frame.

    centers are full-resolution pixel coordinates (n, 2) of the projected
    vertices; eta_f/eta_b are filled by compute_region_etas and reused for
    the whole frame.
    """

    vertex_indices: np.ndarray
    centers: np.ndarray
    eta_f: Optional[np.ndarray] = None
    eta_b: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.vertex_indices)


def select_centers(reduced: TriangleMesh, pose: RigidTransform, k: CameraIntrinsics,
                   field: SignedDistanceField, radius: float, lam: float = 0.1,
                   max_count: int = 100, rng: Optional[np.random.Generator] = None) -> ActiveRegionSet:
    """Projected reduced-mesh vertices within lam*radius of the contour.

    If more than max_count qualify, a uniformly random subset is kept
    (seeded generator; defaults to seed 0).
    """
    px, valid = project_points(k, pose, reduced.vertices)
    cx = np.round(px[:, 0]).astype(np.int64)
    cy = np.round(px[:, 1]).astype(np.int64)
    h, w = field.phi.shape
    inside = valid & (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    idx = np.nonzero(inside)[0]
    if idx.size == 0:
        raise NoVisibleCenters("no vertex projects into the image")
    near = np.abs(field.phi[cy[idx], cx[idx]]) <= lam * radius
    idx = idx[near]
    if idx.size == 0:
        raise NoVisibleCenters("no vertex projects near the contour")
    if idx.size > max_count:
        if rng is None:
            rng = np.random.default_rng(0)
        idx = np.sort(rng.choice(idx, size=max_count, replace=False))
    centers = np.stack([cx[idx], cy[idx]], axis=1).astype(np.int32)
    return ActiveRegionSet(idx.astype(np.int32), centers)


def _disc_indices(center, radius: float, width: int, height: int):
    """Integer pixels with ||p - center|| < radius, clipped to the image."""
    cx, cy = float(center[0]), float(center[1])
    x0 = max(0, int(np.ceil(cx - radius)))
    x1 = min(width - 1, int(np.floor(cx + radius)))
    y0 = max(0, int(np.ceil(cy - radius)))
    y1 = min(height - 1, int(np.floor(cy + radius)))
    if x0 > x1 or y0 > y1:
        return None
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    gx, gy = np.meshgrid(xs, ys)
    m = (gx - cx) ** 2 + (gy - cy) ** 2 < radius * radius
    return gy[m], gx[m]


def scan_local_region(frame: np.ndarray, mask: np.ndarray, j: int, center,
                      radius: float):
    """Raw color counts of the disc around center, split by the mask.

    Pixels with mask == j feed the foreground counts, everything else the
    background counts; pixels outside the image are skipped.
    """
    h, w = mask.shape
    disc = _disc_indices(center, radius, w, h)
    fg = np.zeros(TOTAL_BINS)
    bg = np.zeros(TOTAL_BINS)
    if disc is not None:
        ys, xs = disc
        bins = quantize_colors(frame[ys, xs])
        is_fg = mask[ys, xs] == j
        if is_fg.any():
            fg = np.bincount(bins[is_fg], minlength=TOTAL_BINS).astype(float)
        if (~is_fg).any():
            bg = np.bincount(bins[~is_fg], minlength=TOTAL_BINS).astype(float)
    return ColorHistogram.from_flat(fg), ColorHistogram.from_flat(bg)


def compute_region_etas(field: SignedDistanceField, active: ActiveRegionSet,
                        radius: float, s: float) -> None:
    """Fill the active set's per-region Heaviside masses from the field."""
    h, w = field.phi.shape
    n = len(active)
    eta_f = np.zeros(n)
    eta_b = np.zeros(n)
    for i in range(n):
        disc = _disc_indices(active.centers[i], radius, w, h)
        if disc is None:
            continue
        he = smoothed_heaviside(field.phi[disc], s)
        eta_f[i] = float(he.sum())
        eta_b[i] = float((1.0 - he).sum())
    active.eta_f = eta_f
    active.eta_b = eta_b


def update_model(model: TclcModel, frame: np.ndarray, mask: np.ndarray, j: int,
                 active: ActiveRegionSet) -> TclcModel:
    """Initialize or blend the histograms of every active region.

    First contact initializes a histogram pair from the normalized scan
    (only when both sides saw at least one pixel); afterwards
    fg <- (1-a_f) fg + a_f fg_new and likewise for bg with a_b, each new
    term normalized. A side with zero pixels skips its update.
    """
    for i in range(len(active)):
        v = int(active.vertex_indices[i])
        fg_counts, bg_counts = scan_local_region(frame, mask, j, active.centers[i], model.radius)
        ft, bt = fg_counts.total, bg_counts.total
        hist = model.histograms.get(v)
        if hist is None or not hist.initialized:
            if ft > 0 and bt > 0:
                model.histograms[v] = TclcHistogram(
                    v, fg_counts.normalized(), bg_counts.normalized(), initialized=True)
            continue
        if ft > 0:
            hist.fg.bins *= 1.0 - model.alpha_f
            hist.fg.bins += model.alpha_f / ft * fg_counts.bins
        if bt > 0:
            hist.bg.bins *= 1.0 - model.alpha_b
            hist.bg.bins += model.alpha_b / bt * bg_counts.bins
    return model


def local_posteriors(h: TclcHistogram, y, eta_f: float, eta_b: float):
    """Pixel-wise posterior pair for one region and one quantized color.

    y is either a flat bin index or an (r, g, b) bin triple. The denominator
    is floored so unseen colors yield (0, 0) instead of dividing by zero.
    """
    if not h.initialized:
        raise Uninitialized(f"histogram of vertex {h.vertex_index} was never initialized")
    if np.ndim(y) == 0:
        pf = float(h.fg.flat[int(y)])
        pb = float(h.bg.flat[int(y)])
    else:
        pf = float(h.fg.bins[tuple(int(c) for c in y)])
        pb = float(h.bg.bins[tuple(int(c) for c in y)])
    denom = max(eta_f * pf + eta_b * pb, POSTERIOR_FLOOR)
    return pf / denom, pb / denom


def averaged_posteriors(frame: np.ndarray, x, model: TclcModel, active: ActiveRegionSet,
                        field: Optional[SignedDistanceField] = None, s: float = 1.2):
    """Mean of the local posteriors over every active region containing x."""
    if active.eta_f is None:
        if field is None:
            raise ValueError("active set has no cached etas and no field was given")
        compute_region_etas(field, active, model.radius, s)
    px, py = float(x[0]), float(x[1])
    d2 = (active.centers[:, 0] - px) ** 2 + (active.centers[:, 1] - py) ** 2
    covering = np.nonzero(d2 < model.radius * model.radius)[0]
    y = quantize_colors(frame[int(round(py)), int(round(px))])
    pf_sum = pb_sum = 0.0
    n = 0
    for i in covering:
        hist = model.histograms.get(int(active.vertex_indices[i]))
        if hist is None or not hist.initialized:
            continue
        pf, pb = local_posteriors(hist, int(y), float(active.eta_f[i]), float(active.eta_b[i]))
        pf_sum += pf
        pb_sum += pb
        n += 1
    if n == 0:
        raise NotCovered(f"pixel ({px},{py}) lies outside all initialized regions")
    return pf_sum / n, pb_sum / n


def averaged_posterior_maps(bins_img: np.ndarray, model: TclcModel, active: ActiveRegionSet,
                            scale: float = 1.0):
    """Dense averaged-posterior maps for a whole (possibly downscaled) image.

    bins_img is the quantized color image at the target resolution; centers
    and radius are multiplied by scale (2^(1-level) for pyramid levels).
    Returns (pbar_f, pbar_b, coverage_count); pixels with zero coverage are
    excluded from optimization by the caller.
    """
    h, w = bins_img.shape
    pf_sum = np.zeros((h, w))
    pb_sum = np.zeros((h, w))
    count = np.zeros((h, w), dtype=np.int32)
    radius = model.radius * scale
    for i in range(len(active)):
        hist = model.histograms.get(int(active.vertex_indices[i]))
        if hist is None or not hist.initialized:
            continue
        disc = _disc_indices(active.centers[i] * scale, radius, w, h)
        if disc is None:
            continue
        ys, xs = disc
        bins = bins_img[ys, xs]
        pf = hist.fg.flat[bins]
        pb = hist.bg.flat[bins]
        denom = np.maximum(active.eta_f[i] * pf + active.eta_b[i] * pb, POSTERIOR_FLOOR)
        pf_sum[ys, xs] += pf / denom
        pb_sum[ys, xs] += pb / denom
        count[ys, xs] += 1
    nz = count > 0
    pf_sum[nz] /= count[nz]
    pb_sum[nz] /= count[nz]
    return pf_sum, pb_sum, count


_MAGIC = b"TCLC"
_VERSION = 1


def save_model(path, model: TclcModel) -> None:
    """Binary persistence: header then one record per initialized histogram."""
    records = sorted((v, h) for v, h in model.histograms.items() if h.initialized)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IdddI", _VERSION, model.radius, model.alpha_f,
                             model.alpha_b, len(records)))
        for v, hist in records:
            fh.write(struct.pack("<IB", v, 1))
            fh.write(hist.fg.flat.astype("<f8").tobytes())
            fh.write(hist.bg.flat.astype("<f8").tobytes())


def load_model(path) -> TclcModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a tclc model file")
        version, radius, alpha_f, alpha_b, count = struct.unpack("<IdddI", fh.read(32))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        model = TclcModel(radius=radius, alpha_f=alpha_f, alpha_b=alpha_b)
        for _ in range(count):
            v, flag = struct.unpack("<IB", fh.read(5))
            fg = np.frombuffer(fh.read(8 * TOTAL_BINS), dtype="<f8").copy()
            bg = np.frombuffer(fh.read(8 * TOTAL_BINS), dtype="<f8").copy()
            model.histograms[v] = TclcHistogram(
                v, ColorHistogram.from_flat(fg), ColorHistogram.from_flat(bg),
                initialized=bool(flag))
    return model
