"""Error metrics, tracking protocols and sequence loading.

Two protocols are provided: the reset protocol (success when translation
error < 0.05 m and rotation error < 5 deg, ground-truth reset otherwise) and
the no-reset protocol whose headline number is the area under the success
curve over error/diameter thresholds in [0, 0.2] (maximum 20). Frame 0 is
always the initialization frame and excluded from the rates.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
from PIL import Image

from .errors import EmptyMesh, SequenceFormat
from .geometry import CameraIntrinsics, RigidTransform, TriangleMesh
from . import tracker as trk

DEFAULT_THRESHOLDS = (0.05, math.radians(5.0))


@dataclass
class FrameError:
    translation_error: float  # meters
    rotation_error: float     # radians
    vertex_error: float       # meters


@dataclass
class SequenceReport:
    object_index: int
    frame_errors: List[FrameError] = dc_field(default_factory=list)
    success: List[bool] = dc_field(default_factory=list)
    success_rate: float = 0.0
    auc_score: float = 0.0
    resets: int = 0
    runtimes_ms: List[float] = dc_field(default_factory=list)
    protocol: str = ""


def rotation_error(r: np.ndarray, r_gt: np.ndarray) -> float:
    """Geodesic angle acos((trace(r^T r_gt) - 1) / 2), clamped trace argument."""
    arg = (float(np.trace(np.asarray(r).T @ np.asarray(r_gt))) - 1.0) * 0.5
    return float(np.arccos(np.clip(arg, -1.0, 1.0)))


def vertex_error(mesh: TriangleMesh, t: RigidTransform, t_gt: RigidTransform) -> float:
    """Mean per-vertex displacement between the two posed models."""
    if mesh.num_vertices == 0:
        raise EmptyMesh("vertex error on an empty mesh")
    a = mesh.vertices @ t.rotation.T + t.translation
    b = mesh.vertices @ t_gt.rotation.T + t_gt.translation
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def auc_score(vertex_errors, diameter: float, lambda_max: float = 0.2) -> float:
    """Exact integral of the success percentage over thresholds [0, lambda_max].

    success(lam) counts frames with error < lam * diameter; integrating the
    piecewise-constant curve gives (100/N) * sum(max(0, lambda_max - ratio)).
    """
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    errs = np.asarray(list(vertex_errors), dtype=float)
    if errs.size == 0:
        raise ValueError("no vertex errors to integrate")
    ratios = errs / diameter
    return float(100.0 * np.mean(np.clip(lambda_max - ratios, 0.0, None)))


@dataclass
class Sequence:
    """Loaded sequence: intrinsics, ground truth, frame access by index."""

    path: str
    intrinsics: CameraIntrinsics
    poses: List[List[RigidTransform]]  # [frame][object]
    meta: dict

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    @property
    def num_objects(self) -> int:
        return len(self.poses[0])

    @property
    def mesh_path(self) -> str:
        return os.path.join(self.path, "mesh.obj")

    def frame(self, index: int) -> np.ndarray:
        name = os.path.join(self.path, "frames", f"{index:06d}.png")
        if not os.path.exists(name):
            raise SequenceFormat(f"missing frame file for index {index}: {name}")
        img = np.asarray(Image.open(name).convert("RGB"))
        if img.shape != (self.intrinsics.height, self.intrinsics.width, 3):
            raise SequenceFormat(f"frame {index} has shape {img.shape}, camera says "
                                 f"{self.intrinsics.height}x{self.intrinsics.width}")
        return img


def load_sequence(path) -> Sequence:
    """Parse camera.txt / poses.txt / meta.txt with line-level diagnostics."""
    path = str(path)
    cam_file = os.path.join(path, "camera.txt")
    pose_file = os.path.join(path, "poses.txt")
    if not os.path.exists(cam_file):
        raise SequenceFormat(f"missing camera file: {cam_file}")
    if not os.path.exists(pose_file):
        raise SequenceFormat(f"missing poses file: {pose_file}")

    with open(cam_file, "r", encoding="utf-8") as fh:
        parts = fh.read().split()
    if len(parts) != 6:
        raise SequenceFormat(f"{cam_file}: expected 6 values, got {len(parts)}")
    try:
        k = CameraIntrinsics(float(parts[0]), float(parts[1]), float(parts[2]),
                             float(parts[3]), int(parts[4]), int(parts[5]))
    except ValueError as exc:
        raise SequenceFormat(f"{cam_file}: {exc}") from exc

    raw_poses = []
    with open(pose_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 13:
                raise SequenceFormat(f"{pose_file}:{lineno}: expected 13 fields, got {len(parts)}")
            try:
                obj_id = int(parts[0])
                vals = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise SequenceFormat(f"{pose_file}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise SequenceFormat(f"{pose_file}:{lineno}: non-finite pose entry")
            raw_poses.append((obj_id, RigidTransform(vals[:9].reshape(3, 3), vals[9:])))

    if not raw_poses:
        raise SequenceFormat(f"{pose_file}: no pose lines")
    m = 1
    while m < len(raw_poses) and raw_poses[m][0] != raw_poses[0][0]:
        m += 1
    if len(raw_poses) % m != 0:
        raise SequenceFormat(f"{pose_file}: {len(raw_poses)} lines not divisible by "
                             f"{m} objects")
    poses = []
    for f in range(len(raw_poses) // m):
        block = raw_poses[f * m:(f + 1) * m]
        ids = [b[0] for b in block]
        if ids != [raw_poses[i][0] for i in range(m)]:
            raise SequenceFormat(f"{pose_file}: object ids out of order in frame {f}")
        poses.append([b[1] for b in block])

    meta = {}
    meta_file = os.path.join(path, "meta.txt")
    if os.path.exists(meta_file):
        with open(meta_file, "r", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, value = line.strip().split("=", 1)
                    meta[key] = value
    return Sequence(path, k, poses, meta)


def _evaluate_frame(state: trk.TrackerState, seq: Sequence, meshes, frame_idx: int,
                    reports: List[SequenceReport], thresholds, do_reset: bool) -> None:
    t0 = time.perf_counter()
    trk.step(state, seq.frame(frame_idx))
    dt_ms = (time.perf_counter() - t0) * 1000.0
    for j, rep in enumerate(reports):
        gt = seq.poses[frame_idx][j]
        est = state.objects[j].pose
        err = FrameError(
            translation_error=float(np.linalg.norm(est.translation - gt.translation)),
            rotation_error=rotation_error(est.rotation, gt.rotation),
            vertex_error=vertex_error(meshes[j], est, gt),
        )
        ok = err.translation_error < thresholds[0] and err.rotation_error < thresholds[1]
        rep.frame_errors.append(err)
        rep.success.append(bool(ok))
        rep.runtimes_ms.append(dt_ms / len(reports))
        if do_reset and not ok:
            trk.reset_pose(state, j, gt)
            rep.resets += 1


def _finalize(reports: List[SequenceReport], meshes, protocol: str) -> None:
    for j, rep in enumerate(reports):
        n = len(rep.success)
        rep.success_rate = 100.0 * sum(rep.success) / n if n else 0.0
        rep.auc_score = auc_score([e.vertex_error for e in rep.frame_errors],
                                  meshes[j].diameter) if n else 0.0
        rep.protocol = protocol


def rbot_protocol(state: trk.TrackerState, seq: Sequence,
                  thresholds=DEFAULT_THRESHOLDS) -> List[SequenceReport]:
    """Reset protocol: evaluate frames 1..N, resetting to ground truth on failure."""
    meshes = [o.mesh_pair.full for o in state.objects]
    trk.initialize(state, seq.frame(0), seq.poses[0])
    reports = [SequenceReport(object_index=j) for j in range(len(state.objects))]
    for f in range(1, seq.num_frames):
        _evaluate_frame(state, seq, meshes, f, reports, thresholds, do_reset=True)
    _finalize(reports, meshes, "rbot")
    return reports


def opt_protocol(state: trk.TrackerState, seq: Sequence,
                 thresholds=DEFAULT_THRESHOLDS) -> List[SequenceReport]:
    """No-reset protocol: ground truth only initializes; AUC is the headline."""
    meshes = [o.mesh_pair.full for o in state.objects]
    trk.initialize(state, seq.frame(0), seq.poses[0])
    reports = [SequenceReport(object_index=j) for j in range(len(state.objects))]
    for f in range(1, seq.num_frames):
        _evaluate_frame(state, seq, meshes, f, reports, thresholds, do_reset=False)
    _finalize(reports, meshes, "auc")
    return reports


def report_to_dict(rep: SequenceReport) -> dict:
    return {
        "object_index": rep.object_index,
        "protocol": rep.protocol,
        "success_rate": rep.success_rate,
        "auc_score": rep.auc_score,
        "resets": rep.resets,
        "frames_evaluated": len(rep.success),
        "success": rep.success,
        "translation_error_m": [e.translation_error for e in rep.frame_errors],
        "rotation_error_rad": [e.rotation_error for e in rep.frame_errors],
        "vertex_error_m": [e.vertex_error for e in rep.frame_errors],
        "runtime_ms": rep.runtimes_ms,
    }


def write_report_json(path, reports: List[SequenceReport], extra: Optional[dict] = None) -> None:
    payload = {"objects": [report_to_dict(r) for r in reports]}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def write_errors_csv(path, reports: List[SequenceReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,object,translation_error_m,rotation_error_rad,vertex_error_m,success\n")
        for rep in reports:
            for i, err in enumerate(rep.frame_errors, start=1):
                fh.write(f"{i},{rep.object_index},{err.translation_error:.9g},"
                         f"{err.rotation_error:.9g},{err.vertex_error:.9g},"
                         f"{int(rep.success[i - 1])}\n")


OVERLAY_COLORS = np.array([[255, 60, 40], [60, 255, 80], [80, 120, 255], [255, 220, 40]])


def draw_overlay(frame: np.ndarray, meshes, poses, k: CameraIntrinsics) -> np.ndarray:
    """Frame copy with the estimated silhouette contours drawn on top."""
    from .level_set import extract_contour
    from .rasterizer import render_scene

    out = frame.copy()
    mask, _ = render_scene(meshes, poses, k)
    for j in range(1, len(meshes) + 1):
        try:
            contour = extract_contour(mask, j)
        except Exception:
            continue
        color = OVERLAY_COLORS[(j - 1) % len(OVERLAY_COLORS)]
        out[contour.pixels[:, 1], contour.pixels[:, 0]] = color
    return out
