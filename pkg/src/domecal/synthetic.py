"""Deterministic synthetic dome datasets with exact ground truth.

Cameras sit on a dome of radius 3 looking at the origin (a Fibonacci
spiral over the upper hemisphere, so any count spreads evenly). Scene
points fill the unit ball, re-jittered per frame so frames differ the way
captured content does. Observations are exact projections plus optional
Gaussian keypoint noise and an optional per-camera-constant bias;
synthetic cost patches are quadratic bowls centered on the exact
projections with random per-patch curvature, giving the dense-feature
term a known optimum.

Everything is drawn from one seeded generator in a fixed documented
order (intrinsics, bias directions, base cloud, then per frame: jitter,
keypoint noise, curvatures, perturbations), so equal seeds produce
bit-identical rigs and patch stores.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCamera, DegenerateConfiguration, InvalidValue
from .features import (
    COST_CHANNELS,
    CostPatch,
    PATCH_SIZE,
    PatchStore,
    origin_for_keypoint,
    save_patch_store,
)
from .geometry import axis_angle_to_quat, project, quat_multiply
from .model import (
    Camera,
    Extrinsics,
    FrameModel,
    Intrinsics,
    Observation,
    Rig,
    TrackedPoint,
)
from .sparse_io import (
    bundle_from_rig,
    write_gt_extrinsics,
    write_intrinsics_json,
    write_sparse_model,
)

DOME_RADIUS = 3.0
DEFAULT_WIDTH = 1280
DEFAULT_HEIGHT = 1024
FOCAL_RANGE = (850.0, 1100.0)
PP_OFFSET_RANGE = 20.0
FRAME_JITTER = 0.05
CURVATURE_RANGE = (0.5, 2.0)
MIN_TRACKS = 8

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation magnitudes for a synthetic dataset.

    ``keypoint_sigma_px`` is Gaussian noise per observation;
    ``keypoint_bias_px`` adds a constant per-camera offset in a random
    per-camera direction (systematic detector error). The remaining
    fields perturb the initial rig away from ground truth by exactly the
    stated magnitude in a random direction: ``focal_rel`` relative on
    each focal length, ``pp_abs_px`` on the principal point,
    ``rot_rad``/``trans`` on each pose.
    """

    keypoint_sigma_px: float = 0.0
    keypoint_bias_px: float = 0.0
    focal_rel: float = 0.0
    pp_abs_px: float = 0.0
    rot_rad: float = 0.0
    trans: float = 0.0


def _dome_directions(n: int) -> np.ndarray:
    """Unit vectors spread over the upper hemisphere (Fibonacci spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = (i + 0.5) / n  # heights in (0, 1): strictly above the equator
    r = np.sqrt(1.0 - z * z)
    azimuth = _GOLDEN_ANGLE * i
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth), z], axis=1)


def _look_at_origin(position: np.ndarray) -> Extrinsics:
    """World-to-camera pose for a camera at ``position`` facing the origin."""
    forward = -position / np.linalg.norm(position)
    hint = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ hint)) > 0.99:
        hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(hint, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ position
    return Extrinsics.from_matrix(rotation, translation)


def _unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    norms = np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    return v / norms


def _ball_points(rng: np.random.Generator, n: int) -> np.ndarray:
    directions = _unit_vectors(rng, n, 3)
    radii = rng.random(n) ** (1.0 / 3.0)
    return directions * radii[:, None]


def _bowl_patch(
    frame_id: int,
    camera_id: int,
    keypoint_index: int,
    origin: tuple[int, int],
    center: np.ndarray,
    curvature: float,
) -> CostPatch:
    """A quadratic cost bowl with analytic derivative channels."""
    u = origin[0] + np.arange(PATCH_SIZE, dtype=np.float64) + 0.5
    v = origin[1] + np.arange(PATCH_SIZE, dtype=np.float64) + 0.5
    du = u[None, :] - center[0]  # (1, u) broadcast over v rows
    dv = v[:, None] - center[1]
    cost = curvature * (du * du + dv * dv)
    grad_u = 2.0 * curvature * np.broadcast_to(du, (PATCH_SIZE, PATCH_SIZE))
    grad_v = 2.0 * curvature * np.broadcast_to(dv, (PATCH_SIZE, PATCH_SIZE))
    return CostPatch(
        frame_id=frame_id,
        camera_id=camera_id,
        keypoint_index=keypoint_index,
        origin=origin,
        data=np.stack([cost, grad_u, grad_v], axis=2),
    )


def generate_dome(
    seed: int,
    n_cameras: int,
    n_frames: int,
    n_points: int,
    noise: NoiseSpec = NoiseSpec(),
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> tuple[Rig, Rig, PatchStore]:
    """Generate (ground-truth rig, perturbed input rig, cost-patch store).

    The ground-truth rig carries exact poses, intrinsics, and points with
    the (possibly noisy) observations; its ``global_intrinsics`` hold the
    true per-camera values. The input rig shares cameras and observations
    but starts from perturbed poses and per-frame intrinsics. Raises
    :class:`DegenerateConfiguration` when fewer than 8 points survive the
    two-view visibility requirement in any frame.
    """
    if n_cameras < 2:
        raise InvalidValue("n_cameras", "need at least 2 cameras")
    if n_points < MIN_TRACKS:
        raise InvalidValue("n_points", f"need at least {MIN_TRACKS} points")
    if n_frames < 1:
        raise InvalidValue("n_frames", "need at least 1 frame")
    if width <= 2 * PATCH_SIZE or height <= 2 * PATCH_SIZE:
        raise InvalidValue("width", "image too small for feature patches")

    rng = np.random.default_rng(seed)

    # 1. Ground-truth intrinsics.
    gt_intrinsics: dict[int, Intrinsics] = {}
    for camera_id in range(n_cameras):
        fx = rng.uniform(*FOCAL_RANGE)
        fy = rng.uniform(*FOCAL_RANGE)
        cx = width / 2.0 + rng.uniform(-PP_OFFSET_RANGE, PP_OFFSET_RANGE)
        cy = height / 2.0 + rng.uniform(-PP_OFFSET_RANGE, PP_OFFSET_RANGE)
        gt_intrinsics[camera_id] = Intrinsics(fx, fy, cx, cy)

    # 2. Ground-truth poses on the dome (no randomness).
    positions = DOME_RADIUS * _dome_directions(n_cameras)
    gt_poses = {i: _look_at_origin(positions[i]) for i in range(n_cameras)}

    # 3. Per-camera keypoint bias directions.
    bias = noise.keypoint_bias_px * _unit_vectors(rng, n_cameras, 2)

    # 4. Shared base cloud.
    base_cloud = _ball_points(rng, n_points)

    gt_frames: list[FrameModel] = []
    input_frames: list[FrameModel] = []
    store = PatchStore(kind="cost", channel_count=COST_CHANNELS)

    for frame_id in range(n_frames):
        # 5. Frame-specific scene content.
        points = base_cloud + FRAME_JITTER * rng.normal(size=(n_points, 3))

        # 6. Exact projections and visibility.
        tracked: list[TrackedPoint] = []
        next_keypoint_index = dict.fromkeys(range(n_cameras), 0)
        patch_args = []
        for point_id in range(n_points):
            position = points[point_id]
            candidates = []
            for camera_id in range(n_cameras):
                # project through the library's own routine so the stored
                # observations reproject bit-exactly under these parameters
                try:
                    exact = project(
                        gt_poses[camera_id], gt_intrinsics[camera_id], position
                    )
                except BehindCamera:
                    continue
                if not (0.0 <= exact[0] < width and 0.0 <= exact[1] < height):
                    continue
                candidates.append((camera_id, exact))
            if len(candidates) < 2:
                continue
            observations = []
            for camera_id, exact in candidates:
                keypoint = exact.copy()
                if noise.keypoint_sigma_px > 0.0:
                    keypoint = keypoint + noise.keypoint_sigma_px * rng.normal(size=2)
                keypoint = keypoint + bias[camera_id]
                if not (0.0 <= keypoint[0] < width and 0.0 <= keypoint[1] < height):
                    continue
                index = next_keypoint_index[camera_id]
                next_keypoint_index[camera_id] = index + 1
                observations.append(
                    Observation(
                        camera_id=camera_id, keypoint=keypoint, cost_patch_id=index
                    )
                )
                patch_args.append((camera_id, index, keypoint, exact))
            if len(observations) < 2:
                continue
            tracked.append(
                TrackedPoint(
                    point_id=point_id, position=position, track=tuple(observations)
                )
            )
        if len(tracked) < MIN_TRACKS:
            raise DegenerateConfiguration(
                f"frame {frame_id}: only {len(tracked)} two-view tracks"
            )

        # 7. Cost patches: bowls at the exact projections.
        for camera_id, index, keypoint, exact in patch_args:
            origin = origin_for_keypoint(keypoint, width, height)
            curvature = rng.uniform(*CURVATURE_RANGE)
            store.add(
                _bowl_patch(frame_id, camera_id, index, origin, exact, curvature)
            )

        points_tuple = tuple(tracked)
        gt_frames.append(
            FrameModel(
                frame_id=frame_id,
                per_camera_pose=dict(gt_poses),
                per_camera_intrinsics=dict(gt_intrinsics),
                points=points_tuple,
            )
        )

        # 8. Perturbed starting state for this frame.
        poses = {}
        intrinsics = {}
        for camera_id in range(n_cameras):
            axis = _unit_vectors(rng, 1, 3)[0]
            q = gt_poses[camera_id].rotation
            if noise.rot_rad > 0.0:
                q = quat_multiply(q, axis_angle_to_quat(noise.rot_rad * axis))
            direction = _unit_vectors(rng, 1, 3)[0]
            t = gt_poses[camera_id].translation + noise.trans * direction
            poses[camera_id] = Extrinsics(q, t)

            k = gt_intrinsics[camera_id]
            signs = rng.integers(0, 2, size=2) * 2 - 1
            pp_dir = _unit_vectors(rng, 1, 2)[0]
            intrinsics[camera_id] = Intrinsics(
                fx=k.fx * (1.0 + noise.focal_rel * signs[0]),
                fy=k.fy * (1.0 + noise.focal_rel * signs[1]),
                cx=k.cx + noise.pp_abs_px * pp_dir[0],
                cy=k.cy + noise.pp_abs_px * pp_dir[1],
            )
        input_frames.append(
            FrameModel(
                frame_id=frame_id,
                per_camera_pose=poses,
                per_camera_intrinsics=intrinsics,
                points=points_tuple,
            )
        )

    cameras = tuple(
        Camera(
            camera_id=camera_id,
            width=width,
            height=height,
            name=f"cam{camera_id:05d}.png",
            gt_extrinsics=gt_poses[camera_id],
        )
        for camera_id in range(n_cameras)
    )
    gt_rig = Rig(
        cameras=cameras,
        frames=tuple(gt_frames),
        global_intrinsics=dict(gt_intrinsics),
    )
    input_rig = Rig(cameras=cameras, frames=tuple(input_frames))
    return gt_rig, input_rig, store


def write_dataset(
    out_dir: str | os.PathLike,
    gt_rig: Rig,
    input_rig: Rig,
    store: PatchStore | None,
) -> None:
    """Write a generated dataset in the on-disk layout the CLI consumes.

    Produces ``frames/frameNNNNN/`` model directories for the input rig,
    a ``features/`` patch directory, ``gt_extrinsics.txt``, and
    ``ground_truth.json`` with the true intrinsics and poses.
    """
    out = Path(out_dir)
    for frame in input_rig.frames:
        write_sparse_model(
            bundle_from_rig(input_rig, frame),
            out / "frames" / f"frame{frame.frame_id:05d}",
        )
    if store is not None and len(store):
        save_patch_store(store, out / "features")
    gt_poses = {c.camera_id: c.gt_extrinsics for c in gt_rig.cameras}
    write_gt_extrinsics(gt_poses, out / "gt_extrinsics.txt")
    write_intrinsics_json(
        list(gt_rig.cameras),
        gt_rig.global_intrinsics,
        out / "ground_truth.json",
        extrinsics=gt_poses,
    )
