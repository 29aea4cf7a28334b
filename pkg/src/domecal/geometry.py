"""Pinhole projection, its analytic derivatives, and rotation utilities.

Conventions used across the package:

* Rotations are unit quaternions stored as ``(w, x, y, z)``, mapping world
  coordinates to camera coordinates: ``x_cam = R(q) @ x_world + t``.
* The canonical sign of a quaternion has a nonnegative scalar part.
* Pose perturbations are right-multiplied axis-angle increments,
  ``R <- R @ Exp(delta)``, paired with additive translation increments.
* Pixel coordinates are continuous, with the center of the top-left pixel
  at (0.5, 0.5).

All functions broadcast over leading axes; a quaternion argument has shape
``(..., 4)``, a vector ``(..., 3)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import BehindCamera, InvalidValue

if TYPE_CHECKING:  # pragma: no cover - import only for annotations
    from .model import Extrinsics, Intrinsics

# Points with camera-frame depth below this are treated as behind the camera.
DEPTH_EPSILON = 1e-6

# Below this rotation angle the closed-form trigonometric coefficients are
# replaced with their Taylor expansions.
_SMALL_ANGLE = 1e-6


# ---------------------------------------------------------------------------
# Quaternion primitives


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Scale a quaternion to unit norm."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so the scalar part is nonnegative.

    When the scalar part is exactly zero the sign of the first nonzero
    vector component is made positive, so canonicalization is idempotent
    and equality comparison between canonical quaternions is well defined.
    """
    q = np.asarray(q, dtype=np.float64)
    flat = np.atleast_2d(q)
    out = flat.copy()
    for i, row in enumerate(flat):
        for component in row:
            if component != 0.0:
                if component < 0.0:
                    out[i] = -row
                break
    return out.reshape(q.shape)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``; composes rotations R(a) @ R(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    """Conjugate quaternion; the inverse for unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion, shape ``(..., 3, 3)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def quat_apply(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors by quaternions: ``R(q) @ v``."""
    m = quat_to_matrix(q)
    return np.einsum("...ij,...j->...i", m, np.asarray(v, dtype=np.float64))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a 3x3 rotation matrix.

    Uses the largest-pivot variant (Shepperd's method) so the result is
    numerically stable for every rotation, then canonicalizes the sign.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise InvalidValue("rotation_matrix", f"expected (3, 3), got {m.shape}")
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    choices = np.array([trace, m[0, 0], m[1, 1], m[2, 2]])
    case = int(np.argmax(choices))
    q = np.empty(4)
    if case == 0:
        s = math.sqrt(max(trace + 1.0, 0.0)) * 2.0
        q[0] = 0.25 * s
        q[1] = (m[2, 1] - m[1, 2]) / s
        q[2] = (m[0, 2] - m[2, 0]) / s
        q[3] = (m[1, 0] - m[0, 1]) / s
    elif case == 1:
        s = math.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0)) * 2.0
        q[0] = (m[2, 1] - m[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (m[0, 1] + m[1, 0]) / s
        q[3] = (m[0, 2] + m[2, 0]) / s
    elif case == 2:
        s = math.sqrt(max(1.0 + m[1, 1] - m[0, 0] - m[2, 2], 0.0)) * 2.0
        q[0] = (m[0, 2] - m[2, 0]) / s
        q[1] = (m[0, 1] + m[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(max(1.0 + m[2, 2] - m[0, 0] - m[1, 1], 0.0)) * 2.0
        q[0] = (m[1, 0] - m[0, 1]) / s
        q[1] = (m[0, 2] + m[2, 0]) / s
        q[2] = (m[1, 2] + m[2, 1]) / s
        q[3] = 0.25 * s
    return quat_canonical(q / np.linalg.norm(q))


def axis_angle_to_quat(phi: np.ndarray) -> np.ndarray:
    """Exponential map from an axis-angle vector to a unit quaternion."""
    phi = np.asarray(phi, dtype=np.float64)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(angle/2)/angle with a series fallback near zero.
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    scale = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    w = np.cos(half)
    return np.concatenate([w, scale * phi], axis=-1)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    """Logarithm map from a unit quaternion to an axis-angle vector.

    The result has angle in [0, pi]; the sign ambiguity of the quaternion
    is resolved internally so q and -q map to the same rotation vector.
    """
    q = np.asarray(q, dtype=np.float64)
    w = q[..., :1]
    v = q[..., 1:]
    sign = np.where(w < 0.0, -1.0, 1.0)
    w = w * sign
    v = v * sign
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < _SMALL_ANGLE
    safe = np.where(small, 1.0, s)
    # angle/s -> 2/w * (1 - s^2 / (3 w^2)) as s -> 0. The series is only
    # consumed where s is small (so w ~ 1 for unit input); clamp w well
    # away from zero so the unused near-pi lanes cannot overflow.
    w_safe = np.where(np.abs(w) < 0.5, 1.0, w)
    series = (2.0 / w_safe) * (1.0 - s**2 / (3.0 * w_safe**2))
    scale = np.where(small, series, angle / safe)
    return scale * v


def geodesic_distance(qa: np.ndarray, qb: np.ndarray) -> float | np.ndarray:
    """Angle in radians of the relative rotation between two quaternions.

    Symmetric, zero only for identical rotations, and insensitive to the
    sign of either quaternion. Accurate near both 0 and pi through the
    atan2 formulation.
    """
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    rel = quat_multiply(quat_conjugate(qa), qb)
    w = np.abs(rel[..., 0])
    s = np.linalg.norm(rel[..., 1:], axis=-1)
    out = 2.0 * np.arctan2(s, w)
    # A representation-identical pair (up to sign) is the same rotation:
    # report exactly zero instead of the product's rounding residue.
    same = np.all(qa == qb, axis=-1) | np.all(qa == -qb, axis=-1)
    out = np.where(same, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=np.float64)
    m = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 1] = -v[..., 2]
    m[..., 0, 2] = v[..., 1]
    m[..., 1, 0] = v[..., 2]
    m[..., 1, 2] = -v[..., 0]
    m[..., 2, 0] = -v[..., 1]
    m[..., 2, 1] = v[..., 0]
    return m


def so3_right_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of the rotation logarithm.

    For r(delta) = Log(Exp(phi) @ Exp(delta)) this is dr/ddelta at delta=0,
    which turns tangent-space perturbations into derivatives of axis-angle
    residuals. Uses the series expansion below the small-angle threshold.
    """
    phi = np.asarray(phi, dtype=np.float64)
    theta2 = np.sum(phi * phi, axis=-1)
    theta = np.sqrt(theta2)
    k = skew(phi)
    k2 = k @ k
    small = theta < _SMALL_ANGLE
    theta_safe = np.where(small, 1.0, theta)
    theta2_safe = np.where(small, 1.0, theta2)
    coeff = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0,
        1.0 / theta2_safe
        - (1.0 + np.cos(theta_safe)) / (2.0 * theta_safe * np.sin(theta_safe)),
    )
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + 0.5 * k + coeff[..., None, None] * k2


# ---------------------------------------------------------------------------
# Batched projection on raw arrays (used by the solver hot path)


def project_batch(
    rot: np.ndarray,
    trans: np.ndarray,
    intr: np.ndarray,
    points: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Project ``points (M, 3)`` through per-row poses and intrinsics.

    ``rot`` is ``(M, 3, 3)``, ``trans`` ``(M, 3)``, ``intr`` ``(M, 4)``
    ordered (fx, fy, cx, cy). Returns pixel coordinates ``(M, 2)`` and
    camera-frame depths ``(M,)``; no depth masking is applied here, so
    callers must check depths against :data:`DEPTH_EPSILON` themselves.
    """
    xc = np.einsum("mij,mj->mi", rot, points) + trans
    z = xc[:, 2]
    z_safe = np.where(np.abs(z) < 1e-300, 1.0, z)
    fx, fy, cx, cy = intr[:, 0], intr[:, 1], intr[:, 2], intr[:, 3]
    pix = np.stack(
        [fx * xc[:, 0] / z_safe + cx, fy * xc[:, 1] / z_safe + cy], axis=-1
    )
    return pix, z


def project_jacobians_batch(
    rot: np.ndarray,
    trans: np.ndarray,
    intr: np.ndarray,
    points: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Projection with all first derivatives, batched.

    Returns ``(pix, depth, d_rotation, d_translation, d_intrinsics,
    d_point)`` where the Jacobians have shapes ``(M, 2, 3)``, ``(M, 2, 3)``,
    ``(M, 2, 4)`` and ``(M, 2, 3)``. The rotation derivative is taken with
    respect to a right-multiplied axis-angle increment.
    """
    points = np.asarray(points, dtype=np.float64)
    xc = np.einsum("mij,mj->mi", rot, points) + trans
    z = xc[:, 2]
    z_safe = np.where(np.abs(z) < 1e-300, 1.0, z)
    inv_z = 1.0 / z_safe
    fx, fy, cx, cy = intr[:, 0], intr[:, 1], intr[:, 2], intr[:, 3]
    xn = xc[:, 0] * inv_z
    yn = xc[:, 1] * inv_z
    pix = np.stack([fx * xn + cx, fy * yn + cy], axis=-1)

    m = points.shape[0]
    # d pixel / d camera-frame point
    d_xc = np.zeros((m, 2, 3), dtype=np.float64)
    d_xc[:, 0, 0] = fx * inv_z
    d_xc[:, 0, 2] = -fx * xn * inv_z
    d_xc[:, 1, 1] = fy * inv_z
    d_xc[:, 1, 2] = -fy * yn * inv_z

    d_translation = d_xc
    d_point = np.einsum("mij,mjk->mik", d_xc, rot)
    # x_cam(delta) = R Exp(delta) x, so d x_cam / d delta = -R skew(x).
    d_rotation = -np.einsum("mij,mjk->mik", d_point, skew(points))

    d_intrinsics = np.zeros((m, 2, 4), dtype=np.float64)
    d_intrinsics[:, 0, 0] = xn
    d_intrinsics[:, 0, 2] = 1.0
    d_intrinsics[:, 1, 1] = yn
    d_intrinsics[:, 1, 3] = 1.0
    return pix, z, d_rotation, d_translation, d_intrinsics, d_point


# ---------------------------------------------------------------------------
# Typed single-point interface


@dataclass(frozen=True)
class ProjectionJacobians:
    """First derivatives of a single projection.

    ``d_rotation`` and ``d_translation`` are 2x3 (pose tangent),
    ``d_intrinsics`` is 2x4 ordered (fx, fy, cx, cy), ``d_point`` is 2x3.
    """

    d_rotation: np.ndarray
    d_translation: np.ndarray
    d_intrinsics: np.ndarray
    d_point: np.ndarray


def _pose_arrays(pose: "Extrinsics") -> tuple[np.ndarray, np.ndarray]:
    rot = quat_to_matrix(pose.rotation)[None]
    trans = np.asarray(pose.translation, dtype=np.float64)[None]
    return rot, trans


def _intr_array(k: "Intrinsics") -> np.ndarray:
    return np.array([[k.fx, k.fy, k.cx, k.cy]], dtype=np.float64)


def project(pose: "Extrinsics", k: "Intrinsics", point: np.ndarray) -> np.ndarray:
    """Project one world point to pixel coordinates.

    Raises :class:`BehindCamera` when the camera-frame depth is below
    :data:`DEPTH_EPSILON`.
    """
    rot, trans = _pose_arrays(pose)
    pts = np.asarray(point, dtype=np.float64)[None]
    pix, depth = project_batch(rot, trans, _intr_array(k), pts)
    if depth[0] < DEPTH_EPSILON:
        raise BehindCamera(depth[0])
    return pix[0]


def project_with_jacobians(
    pose: "Extrinsics", k: "Intrinsics", point: np.ndarray
) -> tuple[np.ndarray, ProjectionJacobians]:
    """Project one world point and return all first derivatives."""
    rot, trans = _pose_arrays(pose)
    pts = np.asarray(point, dtype=np.float64)[None]
    pix, depth, d_rot, d_trans, d_intr, d_pt = project_jacobians_batch(
        rot, trans, _intr_array(k), pts
    )
    if depth[0] < DEPTH_EPSILON:
        raise BehindCamera(depth[0])
    return pix[0], ProjectionJacobians(d_rot[0], d_trans[0], d_intr[0], d_pt[0])
