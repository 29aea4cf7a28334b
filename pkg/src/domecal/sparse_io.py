"""Reading and writing sparse reconstructions, ground truth, and config.

The on-disk reconstruction format is the plain-text triple used by common
structure-from-motion tools: ``cameras.txt``, ``images.txt`` and
``points3D.txt`` in one directory per frame. Only the PINHOLE and
SIMPLE_PINHOLE camera models are accepted; SIMPLE_PINHOLE is promoted to
PINHOLE with fx = fy on parse.

Physical camera identity across frames comes from image names: within each
frame the image names are sorted and assigned camera ids 0..N-1, so frames
that contain the same set of names agree on ids. All parsers are total over
arbitrary input bytes: they either return a parsed structure or raise a
structured error from :mod:`domecal.errors`, never anything else.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import (
    DanglingReference,
    InconsistentCamera,
    InvalidValue,
    IoFailure,
    MalformedLine,
    MissingCamera,
    NonUnitQuaternion,
    UnsupportedCameraModel,
)
from .model import Camera, Extrinsics, FrameModel, Intrinsics, Observation, Rig, TrackedPoint

_SUPPORTED_MODELS = {"PINHOLE": 4, "SIMPLE_PINHOLE": 3}

# Quaternions within this of unit norm are renormalized; beyond, rejected.
QUATERNION_NORM_TOLERANCE = 1e-3

# Significant digits for all floating-point text output; round-trips exactly.
_FLOAT_FORMAT = "{:.17g}"


def _fmt(x: float) -> str:
    return _FLOAT_FORMAT.format(float(x))


def _parse_float(token: str, filename: str, line_number: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(
            filename, line_number, f"cannot parse {what} from {token!r}"
        ) from None
    if not math.isfinite(value):
        raise MalformedLine(filename, line_number, f"non-finite {what}: {token!r}")
    return value


def _parse_int(token: str, filename: str, line_number: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedLine(
            filename, line_number, f"cannot parse {what} from {token!r}"
        ) from None


def _content_lines(text: str):
    """Yield (line_number, stripped_line), skipping blanks and comments."""
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield number, stripped


# ---------------------------------------------------------------------------
# Raw record containers


@dataclass
class _RawCamera:
    camera_id: int
    width: int
    height: int
    intrinsics: Intrinsics


@dataclass
class _RawImage:
    image_id: int
    pose: Extrinsics
    camera_id: int
    name: str
    observations: list[tuple[float, float, int]]


@dataclass
class _RawPoint:
    point_id: int
    position: np.ndarray
    track: list[tuple[int, int]]


@dataclass(eq=False)
class ModelBundle:
    """A parsed single-frame reconstruction plus its camera tables."""

    frame_id: int
    source: str
    frame: FrameModel
    camera_dims: dict[int, tuple[int, int]]
    camera_names: dict[int, str]


# ---------------------------------------------------------------------------
# Text parsers (total over strings)


def parse_cameras_text(text: str, filename: str = "cameras.txt") -> dict[int, _RawCamera]:
    """Parse a cameras file into id-keyed records."""
    cameras: dict[int, _RawCamera] = {}
    for number, line in _content_lines(text):
        tokens = line.split()
        if len(tokens) < 4:
            raise MalformedLine(
                filename, number, f"expected at least 4 tokens, got {len(tokens)}"
            )
        camera_id = _parse_int(tokens[0], filename, number, "camera id")
        model = tokens[1]
        if model not in _SUPPORTED_MODELS:
            raise UnsupportedCameraModel(model)
        width = _parse_int(tokens[2], filename, number, "width")
        height = _parse_int(tokens[3], filename, number, "height")
        if width <= 0 or height <= 0:
            raise MalformedLine(
                filename, number, f"non-positive dimensions {width}x{height}"
            )
        n_params = _SUPPORTED_MODELS[model]
        params = tokens[4:]
        if len(params) != n_params:
            raise MalformedLine(
                filename,
                number,
                f"{model} expects {n_params} parameters, got {len(params)}",
            )
        values = [
            _parse_float(tok, filename, number, f"camera parameter {i}")
            for i, tok in enumerate(params)
        ]
        if model == "SIMPLE_PINHOLE":
            f, cx, cy = values
            intrinsics = Intrinsics(f, f, cx, cy)
        else:
            fx, fy, cx, cy = values
            intrinsics = Intrinsics(fx, fy, cx, cy)
        if camera_id in cameras:
            raise MalformedLine(filename, number, f"duplicate camera id {camera_id}")
        cameras[camera_id] = _RawCamera(camera_id, width, height, intrinsics)
    return cameras


def _parse_quaternion(
    tokens: list[str], filename: str, line_number: int
) -> np.ndarray:
    q = np.array(
        [
            _parse_float(tok, filename, line_number, f"quaternion component {i}")
            for i, tok in enumerate(tokens)
        ]
    )
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > QUATERNION_NORM_TOLERANCE:
        raise NonUnitQuaternion(filename, line_number, norm)
    return q / norm


def parse_images_text(text: str, filename: str = "images.txt") -> dict[int, _RawImage]:
    """Parse an images file: header/observation line pairs.

    The observation line directly follows its header; it may be empty but
    may not be a comment. Observation entries keep their position so track
    indices stay meaningful; entries whose point id is -1 are kept here and
    dropped during cross-linking.
    """
    images: dict[int, _RawImage] = {}
    lines = text.splitlines()
    pending: _RawImage | None = None
    pending_line = 0
    for number, raw in enumerate(lines, start=1):
        if pending is None:
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 10:
                raise MalformedLine(
                    filename,
                    number,
                    f"image header expects 10 tokens, got {len(tokens)}",
                )
            image_id = _parse_int(tokens[0], filename, number, "image id")
            q = _parse_quaternion(tokens[1:5], filename, number)
            t = np.array(
                [
                    _parse_float(tok, filename, number, f"translation component {i}")
                    for i, tok in enumerate(tokens[5:8])
                ]
            )
            camera_id = _parse_int(tokens[8], filename, number, "camera id")
            name = tokens[9]
            if image_id in images:
                raise MalformedLine(filename, number, f"duplicate image id {image_id}")
            pending = _RawImage(image_id, Extrinsics(q, t), camera_id, name, [])
            pending_line = number
        else:
            tokens = raw.split()
            if len(tokens) % 3 != 0:
                raise MalformedLine(
                    filename,
                    number,
                    f"observation line must hold triples, got {len(tokens)} tokens",
                )
            obs = []
            for i in range(0, len(tokens), 3):
                x = _parse_float(tokens[i], filename, number, "keypoint x")
                y = _parse_float(tokens[i + 1], filename, number, "keypoint y")
                pid = _parse_int(tokens[i + 2], filename, number, "point id")
                obs.append((x, y, pid))
            pending.observations = obs
            images[pending.image_id] = pending
            pending = None
    if pending is not None:
        raise MalformedLine(
            filename,
            pending_line,
            "image header is missing its observation line",
        )
    return images


def parse_points_text(text: str, filename: str = "points3D.txt") -> dict[int, _RawPoint]:
    """Parse a 3-D points file into id-keyed records with raw tracks."""
    points: dict[int, _RawPoint] = {}
    for number, line in _content_lines(text):
        tokens = line.split()
        if len(tokens) < 8 or (len(tokens) - 8) % 2 != 0:
            raise MalformedLine(
                filename,
                number,
                f"point record expects 8 + 2k tokens, got {len(tokens)}",
            )
        point_id = _parse_int(tokens[0], filename, number, "point id")
        xyz = np.array(
            [
                _parse_float(tok, filename, number, f"coordinate {i}")
                for i, tok in enumerate(tokens[1:4])
            ]
        )
        for i, tok in enumerate(tokens[4:7]):
            _parse_int(tok, filename, number, f"color component {i}")
        _parse_float(tokens[7], filename, number, "reprojection error")
        track = []
        for i in range(8, len(tokens), 2):
            image_id = _parse_int(tokens[i], filename, number, "track image id")
            p2d = _parse_int(tokens[i + 1], filename, number, "track keypoint index")
            track.append((image_id, p2d))
        if point_id in points:
            raise MalformedLine(filename, number, f"duplicate point id {point_id}")
        points[point_id] = _RawPoint(point_id, xyz, track)
    return points


# ---------------------------------------------------------------------------
# Cross-linked model assembly


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise IoFailure(str(path), str(exc)) from exc


def link_model(
    cameras: dict[int, _RawCamera],
    images: dict[int, _RawImage],
    points: dict[int, _RawPoint],
    frame_id: int = 0,
    source: str = "<memory>",
) -> ModelBundle:
    """Cross-link raw records into a frame model.

    Verifies referential integrity in both directions: every track entry
    must point at an existing image observation that references the track's
    point back, and every observation with a nonnegative point id must
    appear in exactly that point's track. Observations with point id -1
    are dropped.
    """
    names = sorted(img.name for img in images.values())
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise InconsistentCamera(dupes[0], "duplicate image name in one frame")
    cam_id_by_name = {name: i for i, name in enumerate(names)}

    per_camera_pose: dict[int, Extrinsics] = {}
    per_camera_intrinsics: dict[int, Intrinsics] = {}
    camera_dims: dict[int, tuple[int, int]] = {}
    camera_names: dict[int, str] = {}
    phys_by_image: dict[int, int] = {}
    for img in images.values():
        if img.camera_id not in cameras:
            raise DanglingReference("camera", img.camera_id, f"image {img.image_id}")
        cam = cameras[img.camera_id]
        cid = cam_id_by_name[img.name]
        phys_by_image[img.image_id] = cid
        per_camera_pose[cid] = img.pose
        per_camera_intrinsics[cid] = cam.intrinsics
        camera_dims[cid] = (cam.width, cam.height)
        camera_names[cid] = img.name

    tracked: list[TrackedPoint] = []
    pairs_by_point: dict[int, set[tuple[int, int]]] = {
        pid: set(p.track) for pid, p in points.items()
    }
    for point in points.values():
        track_obs = []
        for image_id, p2d_idx in point.track:
            if image_id not in images:
                raise DanglingReference(
                    "image", image_id, f"track of point {point.point_id}"
                )
            img = images[image_id]
            if not 0 <= p2d_idx < len(img.observations):
                raise DanglingReference(
                    "keypoint",
                    f"{image_id}:{p2d_idx}",
                    f"track of point {point.point_id}",
                )
            x, y, pid = img.observations[p2d_idx]
            if pid != point.point_id:
                raise DanglingReference(
                    "track",
                    point.point_id,
                    f"image {image_id} keypoint {p2d_idx} references point {pid}",
                )
            track_obs.append(
                Observation(
                    camera_id=phys_by_image[image_id],
                    keypoint=np.array([x, y]),
                    cost_patch_id=p2d_idx,
                )
            )
        tracked.append(TrackedPoint(point.point_id, point.position, tuple(track_obs)))

    for img in images.values():
        for idx, (_, _, pid) in enumerate(img.observations):
            if pid < 0:
                continue  # unassociated keypoint: dropped
            if pid not in points:
                raise DanglingReference(
                    "point3d", pid, f"image {img.image_id} keypoint {idx}"
                )
            if (img.image_id, idx) not in pairs_by_point[pid]:
                raise DanglingReference(
                    "track",
                    pid,
                    f"image {img.image_id} keypoint {idx} missing from track",
                )

    frame = FrameModel(
        frame_id=frame_id,
        per_camera_pose=per_camera_pose,
        per_camera_intrinsics=per_camera_intrinsics,
        points=tuple(tracked),
    )
    return ModelBundle(
        frame_id=frame_id,
        source=source,
        frame=frame,
        camera_dims=camera_dims,
        camera_names=camera_names,
    )


def parse_sparse_model(directory: str | os.PathLike, frame_id: int = 0) -> ModelBundle:
    """Parse one frame's model directory into a cross-linked bundle."""
    directory = Path(directory)
    cameras = parse_cameras_text(
        _read_text(directory / "cameras.txt"), str(directory / "cameras.txt")
    )
    images = parse_images_text(
        _read_text(directory / "images.txt"), str(directory / "images.txt")
    )
    points = parse_points_text(
        _read_text(directory / "points3D.txt"), str(directory / "points3D.txt")
    )
    return link_model(cameras, images, points, frame_id=frame_id, source=str(directory))


def write_sparse_model(bundle: ModelBundle, directory: str | os.PathLike) -> None:
    """Write a bundle back to the three-file text layout.

    Observation indices are reassigned in track iteration order; numeric
    fields are printed with 17 significant digits so a parse after a write
    reproduces them exactly.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(directory), str(exc)) from exc
    frame = bundle.frame

    cam_ids = sorted(bundle.camera_dims)
    camera_lines = ["# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"]
    for cid in cam_ids:
        width, height = bundle.camera_dims[cid]
        k = frame.per_camera_intrinsics[cid]
        camera_lines.append(
            f"{cid + 1} PINHOLE {width} {height} "
            f"{_fmt(k.fx)} {_fmt(k.fy)} {_fmt(k.cx)} {_fmt(k.cy)}"
        )

    # Rebuild per-image observation lists in track iteration order.
    obs_by_cam: dict[int, list[tuple[float, float, int]]] = {c: [] for c in cam_ids}
    index_map: dict[tuple[int, int], int] = {}
    for point in frame.points:
        for obs in point.track:
            entries = obs_by_cam[obs.camera_id]
            index_map[(point.point_id, obs.camera_id)] = len(entries)
            entries.append(
                (float(obs.keypoint[0]), float(obs.keypoint[1]), point.point_id)
            )

    image_lines = [
        "# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
        "#   POINTS2D[] as (X Y POINT3D_ID)",
    ]
    for cid in cam_ids:
        pose = frame.per_camera_pose[cid]
        q = pose.rotation
        t = pose.translation
        name = bundle.camera_names.get(cid, f"cam{cid:05d}.png")
        image_lines.append(
            f"{cid + 1} {_fmt(q[0])} {_fmt(q[1])} {_fmt(q[2])} {_fmt(q[3])} "
            f"{_fmt(t[0])} {_fmt(t[1])} {_fmt(t[2])} {cid + 1} {name}"
        )
        image_lines.append(
            " ".join(
                f"{_fmt(x)} {_fmt(y)} {pid}" for x, y, pid in obs_by_cam[cid]
            )
        )

    point_lines = [
        "# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID POINT2D_IDX)"
    ]
    for point in frame.points:
        track = " ".join(
            f"{obs.camera_id + 1} {index_map[(point.point_id, obs.camera_id)]}"
            for obs in point.track
        )
        pos = point.position
        line = (
            f"{point.point_id} {_fmt(pos[0])} {_fmt(pos[1])} {_fmt(pos[2])} "
            f"128 128 128 -1"
        )
        point_lines.append(f"{line} {track}" if track else line)

    try:
        (directory / "cameras.txt").write_text("\n".join(camera_lines) + "\n")
        (directory / "images.txt").write_text("\n".join(image_lines) + "\n")
        (directory / "points3D.txt").write_text("\n".join(point_lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(directory), str(exc)) from exc


# ---------------------------------------------------------------------------
# Ground-truth extrinsics


def parse_gt_extrinsics_text(
    text: str,
    filename: str = "gt_extrinsics.txt",
    required_ids: set[int] | None = None,
) -> dict[int, Extrinsics]:
    """Parse ``CAMERA_ID QW QX QY QZ TX TY TZ`` lines.

    Quaternions are renormalized when within the tolerated norm deviation
    and rejected beyond it. When ``required_ids`` is given, every id must
    be covered or :class:`MissingCamera` is raised.
    """
    result: dict[int, Extrinsics] = {}
    for number, line in _content_lines(text):
        tokens = line.split()
        if len(tokens) != 8:
            raise MalformedLine(
                filename, number, f"expected 8 tokens, got {len(tokens)}"
            )
        camera_id = _parse_int(tokens[0], filename, number, "camera id")
        q = _parse_quaternion(tokens[1:5], filename, number)
        t = np.array(
            [
                _parse_float(tok, filename, number, f"translation component {i}")
                for i, tok in enumerate(tokens[5:8])
            ]
        )
        if camera_id in result:
            raise MalformedLine(filename, number, f"duplicate camera id {camera_id}")
        result[camera_id] = Extrinsics(q, t)
    if required_ids is not None:
        for cid in sorted(required_ids):
            if cid not in result:
                raise MissingCamera(cid, f"not covered by {filename}")
    return result


def parse_gt_extrinsics(
    path: str | os.PathLike, required_ids: set[int] | None = None
) -> dict[int, Extrinsics]:
    path = Path(path)
    return parse_gt_extrinsics_text(_read_text(path), str(path), required_ids)


def write_gt_extrinsics(poses: dict[int, Extrinsics], path: str | os.PathLike) -> None:
    lines = ["# CAMERA_ID QW QX QY QZ TX TY TZ"]
    for cid in sorted(poses):
        pose = poses[cid]
        q, t = pose.rotation, pose.translation
        lines.append(
            f"{cid} {_fmt(q[0])} {_fmt(q[1])} {_fmt(q[2])} {_fmt(q[3])} "
            f"{_fmt(t[0])} {_fmt(t[1])} {_fmt(t[2])}"
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(path), str(exc)) from exc


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a refinement run.

    The six ``lambda*`` weights scale, in order: keypoint reprojection,
    rotation regularization, translation regularization, dense-feature
    reprojection, focal consensus, and principal-point consensus.
    ``growth_factor`` multiplies the scheduled weights after every outer
    iteration until ``lambda1`` exceeds ``theta``.
    """

    lambda0: float = 1.0
    lambda1: float = 0.01
    lambda2: float = 0.01
    lambda3: float = 0.01
    lambda4: float = 0.02
    lambda5: float = 0.02
    growth_factor: float = 2.0
    theta: float = 1e6
    cauchy_scale: float = 0.25
    inner_max_iterations: int = 20
    inner_tolerance: float = 1e-9
    feature_mode: str = "cost_maps"
    rotation_residual: str = "geodesic"
    threads: int = 1
    frames_dir: str | None = None
    gt_extrinsics: str | None = None
    features_dir: str | None = None
    output_dir: str | None = None
    gt_intrinsics: str | None = None


_CONFIG_FLOAT_KEYS = {
    "lambda0",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "lambda5",
    "growth_factor",
    "theta",
    "cauchy_scale",
    "inner_tolerance",
}
_CONFIG_INT_KEYS = {"inner_max_iterations", "threads"}
_CONFIG_STR_KEYS = {
    "feature_mode",
    "rotation_residual",
    "frames_dir",
    "gt_extrinsics",
    "features_dir",
    "output_dir",
    "gt_intrinsics",
}


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping and fill defaults for absent keys."""
    if not isinstance(raw, dict):
        raise InvalidValue("config", "top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for key, value in raw.items():
        if key not in known:
            raise InvalidValue(key, "unknown configuration key")
        if key in _CONFIG_FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidValue(key, "expected a number")
            value = float(value)
            if not math.isfinite(value):
                raise InvalidValue(key, "must be finite")
        elif key in _CONFIG_INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise InvalidValue(key, "expected an integer")
        elif key in _CONFIG_STR_KEYS:
            if value is not None and not isinstance(value, str):
                raise InvalidValue(key, "expected a string")
        values[key] = value
    config = RunConfig(**values)
    for name in ("lambda0", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
        if getattr(config, name) < 0:
            raise InvalidValue(name, "must be nonnegative")
    if not config.growth_factor > 1.0:
        raise InvalidValue("growth_factor", "must be greater than 1")
    if not config.theta > 0:
        raise InvalidValue("theta", "must be positive")
    if not config.cauchy_scale > 0:
        raise InvalidValue("cauchy_scale", "must be positive")
    if config.inner_max_iterations < 1:
        raise InvalidValue("inner_max_iterations", "must be at least 1")
    if not config.inner_tolerance > 0:
        raise InvalidValue("inner_tolerance", "must be positive")
    if config.feature_mode not in ("cost_maps", "none"):
        raise InvalidValue("feature_mode", "must be 'cost_maps' or 'none'")
    if config.rotation_residual not in ("geodesic", "literal"):
        raise InvalidValue("rotation_residual", "must be 'geodesic' or 'literal'")
    if config.threads < 1:
        raise InvalidValue("threads", "must be at least 1")
    return config


def _load_json(path: Path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedLine(str(path), exc.lineno, f"invalid JSON: {exc.msg}") from None


def load_config(path: str | os.PathLike) -> RunConfig:
    """Load a JSON config file; absent keys take their defaults."""
    return parse_config(_load_json(Path(path)))


# ---------------------------------------------------------------------------
# Intrinsics JSON documents


def write_intrinsics_json(
    cameras: list[Camera],
    intrinsics: dict[int, Intrinsics],
    path: str | os.PathLike,
    extrinsics: dict[int, Extrinsics] | None = None,
) -> None:
    """Write per-camera intrinsics (optionally with poses) as JSON."""
    doc = {"cameras": []}
    for cam in sorted(cameras, key=lambda c: c.camera_id):
        k = intrinsics[cam.camera_id]
        entry = {
            "camera_id": cam.camera_id,
            "name": cam.name,
            "width": cam.width,
            "height": cam.height,
            "fx": k.fx,
            "fy": k.fy,
            "cx": k.cx,
            "cy": k.cy,
        }
        if extrinsics is not None and cam.camera_id in extrinsics:
            pose = extrinsics[cam.camera_id]
            q, t = pose.rotation, pose.translation
            entry.update(
                qw=float(q[0]),
                qx=float(q[1]),
                qy=float(q[2]),
                qz=float(q[3]),
                tx=float(t[0]),
                ty=float(t[1]),
                tz=float(t[2]),
            )
        doc["cameras"].append(entry)
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(str(path), str(exc)) from exc


def read_intrinsics_json(path: str | os.PathLike) -> dict[int, Intrinsics]:
    """Read per-camera intrinsics from the JSON document format."""
    doc = _load_json(Path(path))
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise InvalidValue("cameras", f"{path}: expected a 'cameras' list")
    result: dict[int, Intrinsics] = {}
    for entry in doc["cameras"]:
        if not isinstance(entry, dict):
            raise InvalidValue("cameras", f"{path}: entries must be objects")
        try:
            cid = entry["camera_id"]
            k = Intrinsics(
                float(entry["fx"]),
                float(entry["fy"]),
                float(entry["cx"]),
                float(entry["cy"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidValue("cameras", f"{path}: {exc}") from None
        if isinstance(cid, bool) or not isinstance(cid, int):
            raise InvalidValue("camera_id", f"{path}: expected an integer")
        if cid in result:
            raise InvalidValue("camera_id", f"{path}: duplicate camera {cid}")
        result[cid] = k
    return result


# ---------------------------------------------------------------------------
# Multi-frame rig loading


def load_rig(
    frames_dir: str | os.PathLike,
    gt_extrinsics_path: str | os.PathLike | None = None,
    threads: int = 1,
) -> Rig:
    """Load all frame models under a directory into one rig.

    Subdirectories containing ``cameras.txt`` are treated as frames, in
    sorted name order. Every frame must contain the same set of image
    names with identical dimensions; ground-truth extrinsics, when given,
    must cover every camera.
    """
    frames_dir = Path(frames_dir)
    try:
        subdirs = sorted(
            d for d in frames_dir.iterdir() if d.is_dir() and (d / "cameras.txt").is_file()
        )
    except OSError as exc:
        raise IoFailure(str(frames_dir), str(exc)) from exc
    if not subdirs:
        raise IoFailure(str(frames_dir), "no frame model subdirectories found")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            bundles = list(
                pool.map(
                    lambda pair: parse_sparse_model(pair[1], frame_id=pair[0]),
                    enumerate(subdirs),
                )
            )
    else:
        bundles = [parse_sparse_model(d, frame_id=i) for i, d in enumerate(subdirs)]

    reference = bundles[0]
    for bundle in bundles[1:]:
        if bundle.camera_names != reference.camera_names:
            ours = set(reference.camera_names.values())
            theirs = set(bundle.camera_names.values())
            diff = sorted(ours.symmetric_difference(theirs))
            raise MissingCamera(
                diff[0] if diff else "?",
                f"camera sets differ between {reference.source} and {bundle.source}",
            )
        if bundle.camera_dims != reference.camera_dims:
            for cid, dims in bundle.camera_dims.items():
                if reference.camera_dims.get(cid) != dims:
                    raise InconsistentCamera(
                        bundle.camera_names[cid],
                        f"dimensions differ between frames: "
                        f"{reference.camera_dims.get(cid)} vs {dims}",
                    )

    gt: dict[int, Extrinsics] = {}
    if gt_extrinsics_path is not None:
        gt = parse_gt_extrinsics(
            gt_extrinsics_path, required_ids=set(reference.camera_dims)
        )

    cameras = tuple(
        Camera(
            camera_id=cid,
            width=reference.camera_dims[cid][0],
            height=reference.camera_dims[cid][1],
            name=reference.camera_names[cid],
            gt_extrinsics=gt.get(cid),
        )
        for cid in sorted(reference.camera_dims)
    )
    return Rig(cameras=cameras, frames=tuple(b.frame for b in bundles))


def bundle_from_rig(rig: Rig, frame: FrameModel) -> ModelBundle:
    """Wrap a rig frame as a bundle so it can be written to disk."""
    return ModelBundle(
        frame_id=frame.frame_id,
        source="<rig>",
        frame=frame,
        camera_dims={c.camera_id: (c.width, c.height) for c in rig.cameras},
        camera_names={c.camera_id: c.name or f"cam{c.camera_id:05d}.png" for c in rig.cameras},
    )
