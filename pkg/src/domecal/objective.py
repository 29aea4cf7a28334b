"""Assembly of the calibration objective into solver residual blocks.

The total objective over a multi-frame rig is

    L = L3 + (1 / N_F) * sum over frames of (L0 + L1 + L2)

where, per frame with observation count T (the summed track lengths):

- L0: robust keypoint reprojection, weight lambda0 / T per observation;
- L1: extrinsics regularization against ground truth, one rotation and one
  translation residual per camera, weights lambda1 / N_C and lambda2 / N_C;
- L2: dense-feature cost reprojection, weight lambda3 / T per observation
  that has a cost patch;
- L3: intrinsics consensus, coupling each frame's per-camera intrinsics to
  the camera's global intrinsics: focal and principal-point deviation
  residuals weighted lambda4 / (N_C * N_F) and lambda5 / (N_C * N_F).

All residuals share one robust kernel (Cauchy, scale 0.25 by default). The
1/N_F factor is folded into the per-frame term weights at assembly; L3
carries its own 1/(N_C*N_F) normalization. Normalizers are frozen at
assembly time: observations that temporarily drop out (behind the camera,
outside a patch) do not change T.

:func:`evaluate_objective` recomputes the same quantity by direct scalar
loops, sharing none of the solver's assembly or batching machinery; it is
the reference the assembled problem is validated against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidValue, MissingCamera, OutOfPatch
from .features import PatchStore, cost_lookup
from .geometry import geodesic_distance, project, quat_to_axis_angle
from .model import Extrinsics, FrameModel, Rig
from .robust import DEFAULT_CAUCHY_SCALE, RobustLoss, rho
from .solver import Problem, ResidualBlock


def pose_key(frame_id: int, camera_id: int) -> tuple:
    return ("pose", frame_id, camera_id)


def intrinsics_key(frame_id: int, camera_id: int) -> tuple:
    return ("intr", frame_id, camera_id)


def global_intrinsics_key(camera_id: int) -> tuple:
    return ("gintr", camera_id)


def point_key(frame_id: int, point_id: int) -> tuple:
    return ("pt", frame_id, point_id)


def _loss(cauchy_scale: float) -> RobustLoss:
    return RobustLoss(kind="cauchy", scale=cauchy_scale)


def build_reprojection_term(
    frame: FrameModel,
    lambda0: float,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
    scale: float = 1.0,
) -> list[ResidualBlock]:
    """Keypoint reprojection residuals: one 2-vector per observation.

    Each block's weight is ``scale * lambda0 / T`` with T the frame's total
    observation count, so duplicating every observation leaves the term's
    value unchanged. ``scale`` carries the cross-frame 1/N_F factor.
    """
    total = frame.observation_count()
    if lambda0 == 0.0 or total == 0:
        return []
    weight = scale * lambda0 / total
    loss = _loss(cauchy_scale)
    blocks = []
    for point in frame.points:
        pk = point_key(frame.frame_id, point.point_id)
        for obs in point.track:
            blocks.append(
                ResidualBlock(
                    kind="reprojection",
                    params=(
                        pose_key(frame.frame_id, obs.camera_id),
                        intrinsics_key(frame.frame_id, obs.camera_id),
                        pk,
                    ),
                    weight=weight,
                    loss=loss,
                    data=(np.asarray(obs.keypoint, dtype=np.float64),),
                )
            )
    return blocks


def build_extrinsics_reg(
    frame: FrameModel,
    gt: dict[int, Extrinsics],
    lambda1: float,
    lambda2: float,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
    scale: float = 1.0,
    rotation_residual: str = "geodesic",
) -> list[ResidualBlock]:
    """Ground-truth anchoring: per camera, one rotation residual (the
    axis-angle of the relative rotation, weight ``scale * lambda1 / N_C``)
    and one translation-difference residual (``scale * lambda2 / N_C``).

    ``rotation_residual`` selects the rotation reading: ``"geodesic"``
    (relative-rotation axis-angle, the default) or ``"literal"`` (plain
    difference of absolute axis-angle vectors).
    """
    if rotation_residual not in ("geodesic", "literal"):
        raise InvalidValue("rotation_residual", "must be 'geodesic' or 'literal'")
    camera_ids = sorted(frame.per_camera_pose)
    n_cameras = len(camera_ids)
    if n_cameras == 0 or (lambda1 == 0.0 and lambda2 == 0.0):
        return []
    loss = _loss(cauchy_scale)
    blocks = []
    for camera_id in camera_ids:
        if camera_id not in gt:
            raise MissingCamera(camera_id, "no ground-truth extrinsics")
        anchor = gt[camera_id]
        pk = pose_key(frame.frame_id, camera_id)
        if lambda1 > 0.0:
            rot_data = (np.asarray(anchor.rotation, dtype=np.float64),)
            if rotation_residual == "literal":
                rot_data += ("literal",)
            blocks.append(
                ResidualBlock(
                    kind="rot_reg",
                    params=(pk,),
                    weight=scale * lambda1 / n_cameras,
                    loss=loss,
                    data=rot_data,
                )
            )
        if lambda2 > 0.0:
            blocks.append(
                ResidualBlock(
                    kind="trans_reg",
                    params=(pk,),
                    weight=scale * lambda2 / n_cameras,
                    loss=loss,
                    data=(np.asarray(anchor.translation, dtype=np.float64),),
                )
            )
    return blocks


def build_featuremetric_term(
    frame: FrameModel,
    store: PatchStore | None,
    lambda3: float,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
    scale: float = 1.0,
) -> tuple[list[ResidualBlock], int]:
    """Dense-feature cost residuals: one scalar per observation that has a
    cost patch, the interpolated cost value at the current projection.

    The weight normalizer is the frame's full observation count (frozen at
    assembly), so observations without patches dilute but never raise the
    term. Returns the blocks and the count of patchless observations.
    """
    total = frame.observation_count()
    if lambda3 == 0.0 or store is None or total == 0:
        return [], 0
    weight = scale * lambda3 / total
    loss = _loss(cauchy_scale)
    blocks = []
    missing = 0
    for point in frame.points:
        pk = point_key(frame.frame_id, point.point_id)
        for obs in point.track:
            patch = (
                store.get(frame.frame_id, obs.camera_id, obs.cost_patch_id)
                if obs.cost_patch_id is not None
                else None
            )
            if patch is None:
                missing += 1
                continue
            blocks.append(
                ResidualBlock(
                    kind="featuremetric",
                    params=(
                        pose_key(frame.frame_id, obs.camera_id),
                        intrinsics_key(frame.frame_id, obs.camera_id),
                        pk,
                    ),
                    weight=weight,
                    loss=loss,
                    data=(
                        np.ascontiguousarray(np.moveaxis(patch.data, 2, 0)),
                        np.asarray(patch.origin, dtype=np.float64),
                    ),
                )
            )
    return blocks, missing


def build_intrinsics_variance(
    rig: Rig,
    lambda4: float,
    lambda5: float,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
) -> list[ResidualBlock]:
    """Cross-frame intrinsics consensus residuals.

    Per (camera, frame): a 2-vector focal deviation (weight
    ``lambda4 / (N_C * N_F)``) and a 2-vector principal-point deviation
    (``lambda5 / (N_C * N_F)``) between the frame's intrinsics block and
    the camera's global block.
    """
    if lambda4 == 0.0 and lambda5 == 0.0:
        return []
    if not rig.global_intrinsics:
        raise InvalidValue("global_intrinsics", "not initialized on the rig")
    n_cameras = len(rig.cameras)
    n_frames = len(rig.frames)
    loss = _loss(cauchy_scale)
    norm = n_cameras * n_frames
    blocks = []
    for frame in rig.frames:
        for camera_id in sorted(frame.per_camera_intrinsics):
            params = (
                intrinsics_key(frame.frame_id, camera_id),
                global_intrinsics_key(camera_id),
            )
            if lambda4 > 0.0:
                blocks.append(
                    ResidualBlock(
                        kind="intrinsics_var_focal",
                        params=params,
                        weight=lambda4 / norm,
                        loss=loss,
                    )
                )
            if lambda5 > 0.0:
                blocks.append(
                    ResidualBlock(
                        kind="intrinsics_var_pp",
                        params=params,
                        weight=lambda5 / norm,
                        loss=loss,
                    )
                )
    return blocks


@dataclass
class AssemblyInfo:
    """Bookkeeping from one assembly: block counts and dropped inputs."""

    residual_blocks: int = 0
    missing_patches: int = 0


def assemble(
    rig: Rig,
    weights,
    store: PatchStore | None = None,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
    feature_mode: str = "cost_maps",
    constant_poses: bool = False,
    rotation_residual: str = "geodesic",
) -> tuple[Problem, AssemblyInfo]:
    """Build the full multi-frame problem for the given term weights.

    ``weights`` is anything with attributes ``lambda0``..``lambda5`` (a
    schedule or a run config). Parameter blocks are one pose and one
    intrinsics block per (frame, camera), one block per 3-D point, and one
    global intrinsics block per camera; ``constant_poses`` freezes every
    pose at its current value.
    """
    problem = Problem()
    info = AssemblyInfo()
    n_frames = len(rig.frames)
    if n_frames == 0:
        raise InvalidValue("rig", "no frames to assemble")
    frame_scale = 1.0 / n_frames

    for camera in rig.cameras:
        if camera.camera_id in rig.global_intrinsics:
            problem.add_parameter_block(
                global_intrinsics_key(camera.camera_id),
                "global_intrinsics",
                rig.global_intrinsics[camera.camera_id].as_array(),
            )
    for frame in rig.frames:
        for camera_id in sorted(frame.per_camera_pose):
            problem.add_parameter_block(
                pose_key(frame.frame_id, camera_id),
                "pose",
                frame.per_camera_pose[camera_id],
                constant=constant_poses,
            )
            problem.add_parameter_block(
                intrinsics_key(frame.frame_id, camera_id),
                "intrinsics",
                frame.per_camera_intrinsics[camera_id].as_array(),
            )
        for point in frame.points:
            problem.add_parameter_block(
                point_key(frame.frame_id, point.point_id), "point3", point.position
            )

    gt = {
        c.camera_id: c.gt_extrinsics
        for c in rig.cameras
        if c.gt_extrinsics is not None
    }
    use_features = feature_mode == "cost_maps" and store is not None
    blocks: list[ResidualBlock] = []
    for frame in rig.frames:
        blocks += build_reprojection_term(
            frame, weights.lambda0, cauchy_scale, scale=frame_scale
        )
        blocks += build_extrinsics_reg(
            frame, gt, weights.lambda1, weights.lambda2, cauchy_scale,
            scale=frame_scale, rotation_residual=rotation_residual,
        )
        if use_features:
            fm_blocks, missing = build_featuremetric_term(
                frame, store, weights.lambda3, cauchy_scale, scale=frame_scale
            )
            blocks += fm_blocks
            info.missing_patches += missing
    blocks += build_intrinsics_variance(
        rig, weights.lambda4, weights.lambda5, cauchy_scale
    )
    for block in blocks:
        problem.add_residual_block(block)
    info.residual_blocks = len(blocks)
    return problem, info


# ---------------------------------------------------------------------------
# Independent straight-loop evaluator


@dataclass
class ObjectiveBreakdown:
    """Objective value recomputed term by term with plain scalar loops."""

    total: float
    l0: list[float] = field(default_factory=list)  # per frame
    l1: list[float] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    l3: float = 0.0
    skipped_observations: int = 0


def evaluate_objective(
    rig: Rig,
    weights,
    store: PatchStore | None = None,
    cauchy_scale: float = DEFAULT_CAUCHY_SCALE,
    feature_mode: str = "cost_maps",
    rotation_residual: str = "geodesic",
) -> ObjectiveBreakdown:
    """Recompute the objective directly from the rig, one term at a time.

    This shares no assembly, batching, or scatter machinery with the
    solver: every residual is evaluated scalar-by-scalar in explicit
    loops, with the per-term normalizers applied at the end. Observations
    behind the camera or outside their patch contribute zero, matching the
    solver's drop semantics.
    """
    loss = _loss(cauchy_scale)
    n_frames = len(rig.frames)
    n_cameras = len(rig.cameras)
    gt = {
        c.camera_id: c.gt_extrinsics
        for c in rig.cameras
        if c.gt_extrinsics is not None
    }
    use_features = feature_mode == "cost_maps" and store is not None

    breakdown = ObjectiveBreakdown(total=0.0)
    for frame in rig.frames:
        total_obs = frame.observation_count()
        l0 = 0.0
        l2 = 0.0
        for point in frame.points:
            for obs in point.track:
                pose = frame.per_camera_pose[obs.camera_id]
                k = frame.per_camera_intrinsics[obs.camera_id]
                try:
                    pix = project(pose, k, point.position)
                except BehindCamera:
                    breakdown.skipped_observations += 1
                    continue
                r = pix - np.asarray(obs.keypoint, dtype=np.float64)
                value, _ = rho(loss, float(np.hypot(r[0], r[1])))
                l0 += value
                if use_features and obs.cost_patch_id is not None:
                    patch = store.get(
                        frame.frame_id, obs.camera_id, obs.cost_patch_id
                    )
                    if patch is not None:
                        try:
                            cost, _ = cost_lookup(patch, pix)
                        except OutOfPatch:
                            breakdown.skipped_observations += 1
                        else:
                            value, _ = rho(loss, abs(cost))
                            l2 += value
        if total_obs:
            l0 *= weights.lambda0 / total_obs
            l2 *= weights.lambda3 / total_obs
        breakdown.l0.append(l0)
        breakdown.l2.append(l2 if use_features else 0.0)

        l1 = 0.0
        camera_ids = sorted(frame.per_camera_pose)
        for camera_id in camera_ids:
            anchor = gt.get(camera_id)
            if anchor is None:
                raise MissingCamera(camera_id, "no ground-truth extrinsics")
            pose = frame.per_camera_pose[camera_id]
            if rotation_residual == "literal":
                diff = quat_to_axis_angle(pose.rotation) - quat_to_axis_angle(
                    anchor.rotation
                )
                angle = float(np.linalg.norm(diff))
            else:
                angle = geodesic_distance(anchor.rotation, pose.rotation)
            rot_value, _ = rho(loss, angle)
            dt = pose.translation - anchor.translation
            trans_value, _ = rho(loss, float(np.linalg.norm(dt)))
            l1 += weights.lambda1 * rot_value / len(camera_ids)
            l1 += weights.lambda2 * trans_value / len(camera_ids)
        breakdown.l1.append(l1)

    l3 = 0.0
    if (weights.lambda4 > 0.0 or weights.lambda5 > 0.0) and not rig.global_intrinsics:
        raise InvalidValue("global_intrinsics", "not initialized on the rig")
    if rig.global_intrinsics and (weights.lambda4 > 0.0 or weights.lambda5 > 0.0):
        norm = n_cameras * n_frames
        for frame in rig.frames:
            for camera_id in sorted(frame.per_camera_intrinsics):
                k = frame.per_camera_intrinsics[camera_id]
                g = rig.global_intrinsics[camera_id]
                focal = np.hypot(k.fx - g.fx, k.fy - g.fy)
                pp = np.hypot(k.cx - g.cx, k.cy - g.cy)
                focal_value, _ = rho(loss, float(focal))
                pp_value, _ = rho(loss, float(pp))
                l3 += (weights.lambda4 * focal_value + weights.lambda5 * pp_value) / norm
    breakdown.l3 = l3

    per_frame = sum(
        breakdown.l0[i] + breakdown.l1[i] + breakdown.l2[i] for i in range(n_frames)
    )
    breakdown.total = l3 + per_frame / n_frames
    return breakdown
