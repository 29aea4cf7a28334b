"""Intrinsics error metrics, aggregation, and report rendering.

Errors compare estimated against ground-truth intrinsics per camera and
average over cameras:

- focal_abs: mean over cameras of |dfx| + |dfy| (pixels);
- focal_rel: mean over cameras of |dfx|/fx_gt + |dfy|/fy_gt (ratio);
- pp_abs:    mean over cameras of |dcx| + |dcy| (pixels);
- pp_rel:    mean over cameras of |dcx|/width + |dcy|/height (ratio).

Relative values are stored as plain ratios everywhere; the per-mille
scaling (x1000) is applied only when rendering reports. Per-frame error
sets aggregate elementwise into mean/max/min over frames; the global
(multi-frame) intrinsics yield a single error set whose max/min columns
are marked absent and render as "/".
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import EmptyInput, KeyMismatch
from .model import Intrinsics

_METRICS = ("focal_abs", "focal_rel", "pp_abs", "pp_rel")


@dataclass(frozen=True)
class IntrinsicsErrors:
    """The four error metrics of one estimate set against ground truth."""

    focal_abs: float
    focal_rel: float
    pp_abs: float
    pp_rel: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in _METRICS}


def _check_keys(est: dict, gt: dict, dims: dict) -> list[int]:
    if set(est) != set(gt) or set(est) != set(dims):
        raise KeyMismatch(
            f"estimated cameras {sorted(est)}, ground truth {sorted(gt)}, "
            f"dimensions {sorted(dims)}"
        )
    if not est:
        raise EmptyInput("no cameras to evaluate")
    return sorted(est)


def camera_errors(
    est: Intrinsics, gt: Intrinsics, dims: tuple[int, int]
) -> IntrinsicsErrors:
    """The error contributions of one camera (the N_C = 1 case)."""
    width, height = dims
    return IntrinsicsErrors(
        focal_abs=abs(est.fx - gt.fx) + abs(est.fy - gt.fy),
        focal_rel=abs(est.fx - gt.fx) / gt.fx + abs(est.fy - gt.fy) / gt.fy,
        pp_abs=abs(est.cx - gt.cx) + abs(est.cy - gt.cy),
        pp_rel=abs(est.cx - gt.cx) / width + abs(est.cy - gt.cy) / height,
    )


def frame_errors(
    est: dict[int, Intrinsics],
    gt: dict[int, Intrinsics],
    dims: dict[int, tuple[int, int]],
) -> IntrinsicsErrors:
    """Mean over cameras of the per-camera error contributions.

    All three maps must share exactly the same camera ids.
    """
    camera_ids = _check_keys(est, gt, dims)
    n = len(camera_ids)
    totals = {name: 0.0 for name in _METRICS}
    for camera_id in camera_ids:
        errors = camera_errors(est[camera_id], gt[camera_id], dims[camera_id])
        for name in _METRICS:
            totals[name] += getattr(errors, name)
    return IntrinsicsErrors(**{name: totals[name] / n for name in _METRICS})


def multiframe_errors(
    global_est: dict[int, Intrinsics],
    gt: dict[int, Intrinsics],
    dims: dict[int, tuple[int, int]],
) -> IntrinsicsErrors:
    """Errors of the single global intrinsics set (frame-independent)."""
    return frame_errors(global_est, gt, dims)


def aggregate(per_frame: list[IntrinsicsErrors]) -> dict[str, dict[str, float]]:
    """Elementwise mean/max/min over frames for each metric."""
    if not per_frame:
        raise EmptyInput("no frames to aggregate")
    out: dict[str, dict[str, float]] = {}
    for name in _METRICS:
        values = [getattr(e, name) for e in per_frame]
        out[name] = {
            "mean": sum(values) / len(values),
            "max": max(values),
            "min": min(values),
        }
    return out


def multiframe_aggregate(errors: IntrinsicsErrors) -> dict[str, dict[str, object]]:
    """The global set's aggregate row: only the mean exists; max/min are
    absent (rendered as "/")."""
    return {
        name: {"mean": getattr(errors, name), "max": None, "min": None}
        for name in _METRICS
    }


def build_report(
    per_frame_est: list[dict[int, Intrinsics]],
    global_est: dict[int, Intrinsics],
    gt: dict[int, Intrinsics],
    dims: dict[int, tuple[int, int]],
    frame_ids: list[int] | None = None,
) -> dict:
    """Assemble the full evaluation report.

    ``per_frame`` holds each frame's error set, ``aggregate`` their
    mean/max/min, ``multiframe`` the global set's aggregate (max/min
    absent), and ``per_camera`` the global set's per-camera breakdown.
    """
    if frame_ids is None:
        frame_ids = list(range(len(per_frame_est)))
    per_frame = [frame_errors(est, gt, dims) for est in per_frame_est]
    global_errors = multiframe_errors(global_est, gt, dims)
    per_camera = []
    for camera_id in sorted(global_est):
        entry = camera_errors(
            global_est[camera_id], gt[camera_id], dims[camera_id]
        ).as_dict()
        entry["camera_id"] = camera_id
        per_camera.append(entry)
    return {
        "per_camera": per_camera,
        "per_frame": [
            {"frame_id": fid, **errors.as_dict()}
            for fid, errors in zip(frame_ids, per_frame)
        ],
        "aggregate": aggregate(per_frame),
        "multiframe": multiframe_aggregate(global_errors),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


_PERMILLE = ("focal_rel", "pp_rel")
_HEADERS = {
    "focal_abs": "focal_abs [px]",
    "focal_rel": "focal_rel [permil]",
    "pp_abs": "pp_abs [px]",
    "pp_rel": "pp_rel [permil]",
}


def _cell(value, name) -> str:
    if value is None:
        return "/"
    if name in _PERMILLE:
        value = value * 1000.0
    return f"{value:.3f}"


def render_table(report: dict) -> str:
    """Render the aggregate and multiframe rows as an aligned text table.

    Relative columns are scaled to per-mille here; absent statistics
    print as "/".
    """
    rows = []
    for stat in ("mean", "max", "min"):
        rows.append(
            (f"per-frame {stat}",
             [report["aggregate"][name][stat] for name in _METRICS])
        )
    for stat in ("mean", "max", "min"):
        rows.append(
            (f"multi-frame {stat}",
             [report["multiframe"][name][stat] for name in _METRICS])
        )
    header = ["", *[_HEADERS[name] for name in _METRICS]]
    table = [header]
    for label, values in rows:
        table.append(
            [label, *[_cell(v, name) for v, name in zip(values, _METRICS)]]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for row in table:
        cells = [row[0].ljust(widths[0])]
        cells += [cell.rjust(widths[i + 1]) for i, cell in enumerate(row[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
