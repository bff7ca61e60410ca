"""Frame-loop orchestration: recursive pose estimation then histogram update.

Per frame the optimizer runs with the active regions and histogram contents
frozen at the previous frame's final pose; only afterwards is the final mask
rendered at the new poses, new centers selected and the histograms updated.
Lost objects are skipped until reset_pose is called for them; resetting keeps
the learned histograms and only re-derives the (geometric) active regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np

from .errors import EmptyRegion, NoVisibleCenters, NotVisible
from .geometry import CameraIntrinsics, MeshPair, RigidTransform
from .level_set import signed_distance_transform
from .optimizer import ObjectInput, OptimizationSettings, optimize
from .rasterizer import render_scene
from .segmentation import (ActiveRegionSet, TclcModel, compute_region_etas,
                           select_centers, update_model)

TRACKING = "tracking"
LOST = "lost"


@dataclass
class TrackedObject:
    mesh_pair: MeshPair
    model: TclcModel
    pose: RigidTransform
    status: str = TRACKING
    active: Optional[ActiveRegionSet] = None
    reason: str = ""


@dataclass
class TrackerState:
    objects: List[TrackedObject]
    settings: OptimizationSettings
    intrinsics: CameraIntrinsics
    frame_index: int = 0
    seed: int = 0
    _rngs: List[np.random.Generator] = dc_field(default_factory=list)

    def rng_for(self, index: int) -> np.random.Generator:
        while len(self._rngs) <= index:
            self._rngs.append(np.random.default_rng([self.seed, len(self._rngs)]))
        return self._rngs[index]


def make_tracker(mesh_pairs, settings: OptimizationSettings, k: CameraIntrinsics,
                 seed: int = 0) -> TrackerState:
    """TrackerState with one fresh histogram model per object."""
    objects = []
    for pair in mesh_pairs:
        radius = settings.radius if settings.radius is not None else 40.0 * k.width / 640.0
        model = TclcModel(radius=radius, alpha_f=settings.alpha_f, alpha_b=settings.alpha_b)
        objects.append(TrackedObject(pair, model, RigidTransform.identity()))
    return TrackerState(objects, settings, k, seed=seed)


def _render_tracking(state: TrackerState):
    meshes = [o.mesh_pair.full for o in state.objects if o.status == TRACKING]
    poses = [o.pose for o in state.objects if o.status == TRACKING]
    indices = [j for j, o in enumerate(state.objects) if o.status == TRACKING]
    mask, depth = render_scene(meshes, poses, state.intrinsics,
                               state.settings.z_near, state.settings.z_far)
    return mask, depth, indices


def _derive_active(state: TrackerState, obj: TrackedObject, mask, mask_index: int,
                   rng: np.random.Generator) -> ActiveRegionSet:
    field = signed_distance_transform(mask, mask_index, state.settings.band)
    active = select_centers(obj.mesh_pair.reduced, obj.pose, state.intrinsics, field,
                            obj.model.radius, state.settings.center_lambda,
                            state.settings.max_centers, rng)
    compute_region_etas(field, active, obj.model.radius, state.settings.heaviside_pitch)
    return active


def initialize(state: TrackerState, frame0: np.ndarray, poses0) -> TrackerState:
    """Start tracking from externally supplied poses on the first frame.

    Re-initializing overwrites all per-object state including histograms.
    """
    if len(poses0) != len(state.objects):
        raise ValueError("one initial pose per object required")
    for obj, pose in zip(state.objects, poses0):
        obj.pose = pose
        obj.status = TRACKING
        obj.active = None
        obj.reason = ""
        obj.model.histograms.clear()
    state._rngs = []
    state.frame_index = 0

    mask, _, indices = _render_tracking(state)
    for mask_index, j in enumerate(indices, start=1):
        obj = state.objects[j]
        try:
            active = _derive_active(state, obj, mask, mask_index, state.rng_for(j))
            update_model(obj.model, frame0, mask, mask_index, active)
            obj.active = active
            if obj.model.initialized_count() == 0:
                raise NotVisible("no histogram could be initialized")
        except (NotVisible, EmptyRegion, NoVisibleCenters) as exc:
            obj.status = LOST
            obj.reason = f"not visible at initialization: {exc}"
    return state


def step(state: TrackerState, frame: np.ndarray) -> List[RigidTransform]:
    """Track one frame: optimize poses, then refresh centers and histograms."""
    tracking = [j for j, o in enumerate(state.objects) if o.status == TRACKING]

    # objects whose active set was cleared (fresh reset) get geometric regions
    pending = [j for j in tracking if state.objects[j].active is None]
    if pending:
        mask, _, indices = _render_tracking(state)
        for mask_index, j in enumerate(indices, start=1):
            if j not in pending:
                continue
            obj = state.objects[j]
            try:
                obj.active = _derive_active(state, obj, mask, mask_index, state.rng_for(j))
            except (EmptyRegion, NoVisibleCenters, NotVisible) as exc:
                obj.status = LOST
                obj.reason = f"no regions at reset pose: {exc}"
    tracking = [j for j, o in enumerate(state.objects) if o.status == TRACKING]

    if tracking:
        inputs = [ObjectInput(state.objects[j].mesh_pair.full, state.objects[j].model,
                              state.objects[j].pose, state.objects[j].active)
                  for j in tracking]
        results = optimize(frame, inputs, state.intrinsics, state.settings)
        for j, res in zip(tracking, results):
            state.objects[j].pose = res.pose
            if res.diverged:
                state.objects[j].status = LOST
                state.objects[j].reason = res.reason

    # appearance update at the new poses
    tracking = [j for j, o in enumerate(state.objects) if o.status == TRACKING]
    if tracking:
        mask, _, indices = _render_tracking(state)
        for mask_index, j in enumerate(indices, start=1):
            obj = state.objects[j]
            try:
                active = _derive_active(state, obj, mask, mask_index, state.rng_for(j))
                update_model(obj.model, frame, mask, mask_index, active)
                obj.active = active
            except (EmptyRegion, NoVisibleCenters, NotVisible) as exc:
                obj.status = LOST
                obj.reason = f"lost after optimization: {exc}"

    state.frame_index += 1
    return [o.pose for o in state.objects]


def reset_pose(state: TrackerState, index: int, pose: RigidTransform) -> None:
    """External pose override; histograms are retained, regions re-derived."""
    obj = state.objects[index]
    obj.pose = pose
    obj.status = TRACKING
    obj.reason = ""
    obj.active = None
