"""Core value types for a fixed multi-camera capture and its validation.

A :class:`Rig` describes one physical camera array observed over one or more
frames. Each :class:`FrameModel` carries the per-frame estimates produced by
an upstream sparse reconstruction: per-camera poses, per-camera intrinsics,
and triangulated points with their image observations. Ground-truth
extrinsics, when known, live on the :class:`Camera` records.

The types are plain containers; they do not enforce geometric invariants at
construction time. :func:`validate_rig` checks the full set of invariants
and reports violations as data, so diagnostic tooling can inspect an
inconsistent rig instead of failing on its first field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import geometry
from .errors import InvalidValue


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    @staticmethod
    def from_array(values: np.ndarray) -> "Intrinsics":
        fx, fy, cx, cy = (float(v) for v in values)
        return Intrinsics(fx, fy, cx, cy)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """World-to-camera pose: unit quaternion (w, x, y, z) plus translation.

    The quaternion is normalized and sign-canonicalized on construction, so
    two Extrinsics describing the same pose store identical arrays.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise InvalidValue("extrinsics", "non-finite rotation or translation")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise InvalidValue("extrinsics", "zero-norm quaternion")
        q = geometry.quat_canonical(q / norm)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def from_matrix(rotation: np.ndarray, translation: np.ndarray) -> "Extrinsics":
        """Build a pose from a 3x3 rotation matrix and translation."""
        return Extrinsics(geometry.matrix_to_quat(rotation), translation)

    def matrix(self) -> np.ndarray:
        """3x3 world-to-camera rotation matrix."""
        return geometry.quat_to_matrix(self.rotation)

    def approx_equal(self, other: "Extrinsics", tol: float = 1e-9) -> bool:
        return (
            geometry.geodesic_distance(self.rotation, other.rotation) <= tol
            and float(np.linalg.norm(self.translation - other.translation)) <= tol
        )


@dataclass(frozen=True, eq=False)
class Camera:
    """One physical camera of the array.

    ``gt_extrinsics`` holds the externally measured pose when available;
    ``name`` is the stable identifier used to match the camera across
    per-frame reconstructions.
    """

    camera_id: int
    width: int
    height: int
    name: str = ""
    gt_extrinsics: Extrinsics | None = None


@dataclass(frozen=True, eq=False)
class Observation:
    """A detected keypoint of one tracked point in one camera's image.

    ``cost_patch_id`` is the keypoint index keying into the patch store for
    this (frame, camera); None when no dense-feature data exists.
    """

    camera_id: int
    keypoint: np.ndarray
    cost_patch_id: int | None = None

    def __post_init__(self):
        kp = np.asarray(self.keypoint, dtype=np.float64).reshape(2).copy()
        kp.flags.writeable = False
        object.__setattr__(self, "keypoint", kp)


@dataclass(frozen=True, eq=False)
class TrackedPoint:
    """A triangulated 3-D point and the observations supporting it."""

    point_id: int
    position: np.ndarray
    track: tuple[Observation, ...]

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "track", tuple(self.track))


@dataclass(frozen=True, eq=False)
class FrameModel:
    """One frame's reconstruction: poses, intrinsics, and points."""

    frame_id: int
    per_camera_pose: dict[int, Extrinsics]
    per_camera_intrinsics: dict[int, Intrinsics]
    points: tuple[TrackedPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def observation_count(self) -> int:
        """Total number of observations across all tracks."""
        return sum(len(p.track) for p in self.points)


@dataclass(frozen=True, eq=False)
class Rig:
    """A camera array with shared intrinsics estimates and per-frame models."""

    cameras: tuple[Camera, ...]
    frames: tuple[FrameModel, ...]
    global_intrinsics: dict[int, Intrinsics] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "frames", tuple(self.frames))

    def camera_by_id(self, camera_id: int) -> Camera:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)


def validate_rig(rig: Rig) -> list[str]:
    """Check every structural and geometric invariant of a rig.

    Returns a list of human-readable violation strings, one per violated
    invariant instance; an empty list means the rig is consistent.
    """
    violations: list[str] = []
    cam_ids = [c.camera_id for c in rig.cameras]
    if len(rig.cameras) < 2:
        violations.append(f"rig has {len(rig.cameras)} cameras; at least 2 required")
    if len(rig.frames) < 1:
        violations.append("rig has no frames")
    if len(set(cam_ids)) != len(cam_ids):
        dupes = sorted({i for i in cam_ids if cam_ids.count(i) > 1})
        violations.append(f"duplicate camera ids {dupes}")
    cams = {c.camera_id: c for c in rig.cameras}

    for cam in rig.cameras:
        if cam.width <= 0 or cam.height <= 0:
            violations.append(
                f"camera {cam.camera_id} has non-positive dimensions "
                f"{cam.width}x{cam.height}"
            )

    def check_intrinsics(owner: str, cam: Camera | None, k: Intrinsics):
        if k.fx <= 0 or k.fy <= 0:
            violations.append(f"{owner} has non-positive focal ({k.fx}, {k.fy})")
        if cam is not None and not (0 <= k.cx < cam.width and 0 <= k.cy < cam.height):
            violations.append(
                f"{owner} principal point ({k.cx}, {k.cy}) outside "
                f"[0, {cam.width}) x [0, {cam.height})"
            )

    for cid, k in rig.global_intrinsics.items():
        if cid not in cams:
            violations.append(f"global intrinsics reference unknown camera {cid}")
            continue
        check_intrinsics(f"global intrinsics of camera {cid}", cams[cid], k)

    frame_ids = [f.frame_id for f in rig.frames]
    if len(set(frame_ids)) != len(frame_ids):
        violations.append("duplicate frame ids")

    for frame in rig.frames:
        fid = frame.frame_id
        for cid in frame.per_camera_pose:
            if cid not in cams:
                violations.append(f"frame {fid} pose references unknown camera {cid}")
        for cid, k in frame.per_camera_intrinsics.items():
            if cid not in cams:
                violations.append(
                    f"frame {fid} intrinsics reference unknown camera {cid}"
                )
                continue
            check_intrinsics(f"frame {fid} intrinsics of camera {cid}", cams[cid], k)
        for pose in frame.per_camera_pose.values():
            # Construction normalizes; tolerate only representation noise.
            norm = float(np.linalg.norm(pose.rotation))
            if abs(norm - 1.0) > 1e-9:
                violations.append(f"frame {fid} has a non-unit pose quaternion")

        point_ids = [p.point_id for p in frame.points]
        if len(set(point_ids)) != len(point_ids):
            violations.append(f"frame {fid} has duplicate point ids")

        for point in frame.points:
            if not np.all(np.isfinite(point.position)):
                violations.append(
                    f"frame {fid} point {point.point_id} has non-finite position"
                )
            if len(point.track) < 2:
                violations.append(
                    f"frame {fid} point {point.point_id} has track length "
                    f"{len(point.track)} (minimum 2)"
                )
            seen: set[int] = set()
            for obs in point.track:
                cid = obs.camera_id
                if cid in seen:
                    violations.append(
                        f"frame {fid} point {point.point_id} observes camera "
                        f"{cid} more than once"
                    )
                seen.add(cid)
                if cid not in cams:
                    violations.append(
                        f"frame {fid} point {point.point_id} references unknown "
                        f"camera {cid}"
                    )
                    continue
                if cid not in frame.per_camera_pose or (
                    cid not in frame.per_camera_intrinsics
                ):
                    violations.append(
                        f"frame {fid} observes camera {cid} without a pose and "
                        f"intrinsics entry"
                    )
                cam = cams[cid]
                u, v = float(obs.keypoint[0]), float(obs.keypoint[1])
                if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
                    violations.append(
                        f"frame {fid} point {point.point_id} keypoint "
                        f"({u}, {v}) outside camera {cid} bounds"
                    )
    return violations


def mean_intrinsics(values: Iterable[Intrinsics]) -> Intrinsics:
    """Arithmetic mean of intrinsics, component-wise."""
    arrays = [k.as_array() for k in values]
    if not arrays:
        raise InvalidValue("intrinsics", "cannot average an empty collection")
    return Intrinsics.from_array(np.mean(arrays, axis=0))
