"""The outer refinement loop: progressive reweighting, then pinning.

Refinement repeats {assemble the objective with the current term weights;
run the inner solver; grow the scheduled weights} until the rotation-
regularization weight exceeds its termination threshold. The four
scheduled weights (extrinsics rotation/translation, focal and principal-
point consensus) are multiplied by a fixed growth factor after every outer
iteration, so the extrinsics are pulled ever harder onto their ground-
truth anchors and the per-frame intrinsics onto the global set. After the
schedule terminates, every pose is set exactly to its ground-truth value
and held constant for one final inner solve, which removes any remaining
weight-dependent bias from the reported intrinsics.

Each outer iteration appends one record to a :class:`RunTrace`; traces
serialize as JSON lines for inspection and regression comparison.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AlreadyTerminated, InvalidValue, MissingCamera, NumericalFailure
from .features import PatchStore
from .geometry import geodesic_distance
from .model import (
    Extrinsics,
    FrameModel,
    Intrinsics,
    Rig,
    TrackedPoint,
    mean_intrinsics,
)
from .objective import (
    assemble,
    global_intrinsics_key,
    intrinsics_key,
    point_key,
    pose_key,
)
from .solver import Problem, SolveReport
from .sparse_io import RunConfig


@dataclass(frozen=True)
class Schedule:
    """The six term weights plus the growth/termination state.

    After ``k`` advances, ``lambda1`` equals its initial value times
    ``growth_factor ** k`` exactly (one multiply per advance, never
    reaccumulated). The schedule is terminated once ``lambda1`` exceeds
    ``theta``.
    """

    lambda0: float = 1.0
    lambda1: float = 0.01
    lambda2: float = 0.01
    lambda3: float = 0.01
    lambda4: float = 0.02
    lambda5: float = 0.02
    growth_factor: float = 2.0
    theta: float = 1e6
    outer_iteration: int = 0

    @classmethod
    def from_config(cls, config: RunConfig) -> "Schedule":
        return cls(
            lambda0=config.lambda0,
            lambda1=config.lambda1,
            lambda2=config.lambda2,
            lambda3=config.lambda3,
            lambda4=config.lambda4,
            lambda5=config.lambda5,
            growth_factor=config.growth_factor,
            theta=config.theta,
        )

    def terminated(self) -> bool:
        return self.lambda1 > self.theta


def advance(schedule: Schedule) -> Schedule:
    """Grow the scheduled weights by one step.

    Multiplies the extrinsics and intrinsics-consensus weights by the
    growth factor and increments the iteration counter; the reprojection
    and featuremetric weights are untouched. Raises
    :class:`AlreadyTerminated` past the termination threshold.
    """
    if schedule.terminated():
        raise AlreadyTerminated()
    g = schedule.growth_factor
    return replace(
        schedule,
        lambda1=schedule.lambda1 * g,
        lambda2=schedule.lambda2 * g,
        lambda4=schedule.lambda4 * g,
        lambda5=schedule.lambda5 * g,
        outer_iteration=schedule.outer_iteration + 1,
    )


@dataclass
class OuterRecord:
    """One outer iteration's summary, serializable as a JSON object."""

    iteration: int
    lambda1: float
    inner_iterations: int
    initial_cost: float
    final_cost: float
    termination: str
    max_rot_deviation: float
    max_trans_deviation: float
    pinned: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "lambda1": self.lambda1,
                "inner_iterations": self.inner_iterations,
                "initial_cost": self.initial_cost,
                "final_cost": self.final_cost,
                "termination": self.termination,
                "max_rot_deviation": self.max_rot_deviation,
                "max_trans_deviation": self.max_trans_deviation,
                "pinned": self.pinned,
            }
        )


@dataclass
class RunTrace:
    """The full refinement history: one record per outer iteration."""

    records: list[OuterRecord] = field(default_factory=list)

    def to_json_lines(self) -> str:
        return "\n".join(r.to_json() for r in self.records) + "\n"


def initialize_global_intrinsics(rig: Rig) -> Rig:
    """Fill the global intrinsics with per-camera means over frames."""
    values: dict[int, Intrinsics] = {}
    for camera in rig.cameras:
        per_frame = [
            frame.per_camera_intrinsics[camera.camera_id]
            for frame in rig.frames
            if camera.camera_id in frame.per_camera_intrinsics
        ]
        if not per_frame:
            raise MissingCamera(camera.camera_id, "appears in no frame")
        values[camera.camera_id] = mean_intrinsics(per_frame)
    return replace(rig, global_intrinsics=values)


def _extract_rig(problem: Problem, rig: Rig) -> Rig:
    """Read refined values out of a solved problem into a new rig."""
    global_intrinsics = {}
    for camera_id in rig.global_intrinsics:
        global_intrinsics[camera_id] = Intrinsics.from_array(
            problem.get_value(global_intrinsics_key(camera_id))
        )
    frames = []
    for frame in rig.frames:
        poses = {}
        intrinsics = {}
        for camera_id in frame.per_camera_pose:
            q, t = problem.get_pose(pose_key(frame.frame_id, camera_id))
            poses[camera_id] = Extrinsics(q, t)
            intrinsics[camera_id] = Intrinsics.from_array(
                problem.get_value(intrinsics_key(frame.frame_id, camera_id))
            )
        points = tuple(
            TrackedPoint(
                point_id=p.point_id,
                position=problem.get_value(point_key(frame.frame_id, p.point_id)),
                track=p.track,
            )
            for p in frame.points
        )
        frames.append(
            FrameModel(
                frame_id=frame.frame_id,
                per_camera_pose=poses,
                per_camera_intrinsics=intrinsics,
                points=points,
            )
        )
    return replace(rig, frames=tuple(frames), global_intrinsics=global_intrinsics)


def _gt_poses(rig: Rig) -> dict[int, Extrinsics]:
    gt = {}
    for camera in rig.cameras:
        if camera.gt_extrinsics is None:
            raise MissingCamera(camera.camera_id, "no ground-truth extrinsics")
        gt[camera.camera_id] = camera.gt_extrinsics
    return gt


def _max_deviation(rig: Rig, gt: dict[int, Extrinsics]) -> tuple[float, float]:
    max_rot = 0.0
    max_trans = 0.0
    for frame in rig.frames:
        for camera_id, pose in frame.per_camera_pose.items():
            anchor = gt[camera_id]
            max_rot = max(
                max_rot, geodesic_distance(anchor.rotation, pose.rotation)
            )
            max_trans = max(
                max_trans,
                float(np.linalg.norm(pose.translation - anchor.translation)),
            )
    return max_rot, max_trans


def _pin_poses(rig: Rig, gt: dict[int, Extrinsics]) -> Rig:
    frames = tuple(
        replace(frame, per_camera_pose={c: gt[c] for c in frame.per_camera_pose})
        for frame in rig.frames
    )
    return replace(rig, frames=frames)


def refine(
    rig: Rig,
    config: RunConfig,
    store: PatchStore | None = None,
) -> tuple[Rig, RunTrace]:
    """Refine a rig's intrinsics by the progressive outer loop.

    Returns a new rig whose per-frame models and global intrinsics are
    refined, plus the trace of all outer iterations (the final, pinned
    solve appears as the last record). The input rig must carry ground-
    truth extrinsics for every camera.
    """
    if not rig.frames:
        raise InvalidValue("rig", "no frames to refine")
    gt = _gt_poses(rig)
    current = rig
    if not current.global_intrinsics:
        current = initialize_global_intrinsics(current)

    feature_mode = config.feature_mode if store is not None else "none"
    schedule = Schedule.from_config(config)
    trace = RunTrace()

    while not schedule.terminated():
        problem, _ = assemble(
            current,
            schedule,
            store,
            cauchy_scale=config.cauchy_scale,
            feature_mode=feature_mode,
            rotation_residual=config.rotation_residual,
        )
        report = _checked_solve(problem, config, schedule.outer_iteration)
        current = _extract_rig(problem, current)
        max_rot, max_trans = _max_deviation(current, gt)
        trace.records.append(
            OuterRecord(
                iteration=schedule.outer_iteration,
                lambda1=schedule.lambda1,
                inner_iterations=report.iterations,
                initial_cost=report.initial_cost,
                final_cost=report.final_cost,
                termination=report.termination,
                max_rot_deviation=max_rot,
                max_trans_deviation=max_trans,
            )
        )
        schedule = advance(schedule)

    # Pin every pose exactly to ground truth and re-solve with poses
    # constant, removing residual weight-dependent bias.
    current = _pin_poses(current, gt)
    problem, _ = assemble(
        current,
        schedule,
        store,
        cauchy_scale=config.cauchy_scale,
        feature_mode=feature_mode,
        constant_poses=True,
        rotation_residual=config.rotation_residual,
    )
    report = _checked_solve(problem, config, schedule.outer_iteration, pinned=True)
    current = _extract_rig(problem, current)
    max_rot, max_trans = _max_deviation(current, gt)
    trace.records.append(
        OuterRecord(
            iteration=schedule.outer_iteration,
            lambda1=schedule.lambda1,
            inner_iterations=report.iterations,
            initial_cost=report.initial_cost,
            final_cost=report.final_cost,
            termination=report.termination,
            max_rot_deviation=max_rot,
            max_trans_deviation=max_trans,
            pinned=True,
        )
    )
    return current, trace


def _checked_solve(
    problem: Problem, config: RunConfig, iteration: int, pinned: bool = False
) -> SolveReport:
    try:
        return problem.solve(
            max_iterations=config.inner_max_iterations,
            tolerance=config.inner_tolerance,
        )
    except NumericalFailure as exc:
        stage = "pinned final solve" if pinned else f"outer iteration {iteration}"
        raise NumericalFailure(
            f"{stage}: {exc.detail}", residual_id=exc.residual_id
        ) from exc


def refine_single_frame(
    rig: Rig,
    frame_id: int,
    config: RunConfig,
    store: PatchStore | None = None,
) -> tuple[FrameModel, dict[int, Intrinsics], RunTrace]:
    """Refine one frame in isolation (the single-frame specialization).

    Builds a one-frame rig around the requested frame and runs the same
    loop; the consensus terms degenerate to tying the frame's intrinsics
    to their own (initially equal) global copies. Returns the refined
    frame, its per-camera intrinsics as the global estimate, and the trace.
    """
    matching = [f for f in rig.frames if f.frame_id == frame_id]
    if not matching:
        raise InvalidValue("frame_id", f"rig has no frame {frame_id}")
    sub_rig = replace(rig, frames=(matching[0],), global_intrinsics={})
    refined, trace = refine(sub_rig, config, store)
    return refined.frames[0], dict(refined.global_intrinsics), trace
