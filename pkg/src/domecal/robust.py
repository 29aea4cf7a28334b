"""Robust loss functions and robust aggregation of feature vectors.

The workhorse loss is the Cauchy function with scale ``c``,

    rho(r) = c^2 * log(1 + (r / c)^2),

evaluated on residual norms. :func:`rho` works on the squared norm so the
solver's reweighting can use the derivative with respect to the squared
residual directly. :func:`robust_mean` minimizes the summed Cauchy loss of
deviations with iteratively reweighted least squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidValue

DEFAULT_CAUCHY_SCALE = 0.25

_IRLS_TOLERANCE = 1e-8
_IRLS_MAX_ITERATIONS = 100


@dataclass(frozen=True)
class RobustLoss:
    """A robust loss: ``kind`` is ``"cauchy"`` or ``"trivial_squared"``.

    ``trivial_squared`` is the plain squared loss, useful to disable
    robustness while keeping the same code path.
    """

    kind: str = "cauchy"
    scale: float = DEFAULT_CAUCHY_SCALE

    def __post_init__(self):
        if self.kind not in ("cauchy", "trivial_squared"):
            raise InvalidValue("loss.kind", f"unknown loss {self.kind!r}")
        if self.kind == "cauchy" and not self.scale > 0:
            raise InvalidValue("loss.scale", "scale must be positive")


def rho_of_squared(
    loss: RobustLoss, squared_norm: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Loss value and its derivative with respect to the squared norm.

    Vectorized over ``squared_norm``. For the Cauchy loss the derivative is
    ``1 / (1 + s / c^2)``, which doubles as the IRLS weight; it is exactly 1
    at zero residual.
    """
    s = np.asarray(squared_norm, dtype=np.float64)
    if loss.kind == "trivial_squared":
        return s.copy(), np.ones_like(s)
    c2 = loss.scale * loss.scale
    ratio = s / c2
    value = c2 * np.log1p(ratio)
    derivative = 1.0 / (1.0 + ratio)
    return value, derivative


def rho(loss: RobustLoss, residual_norm: float) -> tuple[float, float]:
    """Scalar loss value and d(value)/d(squared norm) at a residual norm."""
    value, derivative = rho_of_squared(loss, float(residual_norm) ** 2)
    return float(value), float(derivative)


def robust_mean(
    vectors: np.ndarray,
    loss: RobustLoss | None = None,
    tolerance: float = _IRLS_TOLERANCE,
    max_iterations: int = _IRLS_MAX_ITERATIONS,
) -> np.ndarray:
    """Minimize the summed robust loss of deviations from a center.

    ``vectors`` is ``(N, D)``. Starts from the arithmetic mean and applies
    iteratively reweighted least squares; for losses whose value is concave
    in the squared deviation (both supported kinds are) each reweighted step
    cannot increase the objective. Stops when the center moves less than
    ``tolerance`` or after ``max_iterations``.
    """
    if loss is None:
        loss = RobustLoss()
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise DimensionMismatch(
            f"robust_mean expects a non-empty (N, D) array, got shape {v.shape}"
        )
    center = v.mean(axis=0)
    for _ in range(max_iterations):
        squared = np.sum((v - center) ** 2, axis=1)
        _, weights = rho_of_squared(loss, squared)
        total = float(weights.sum())
        if total <= 0.0:
            break
        new_center = (weights[:, None] * v).sum(axis=0) / total
        shift = float(np.linalg.norm(new_center - center))
        center = new_center
        if shift < tolerance:
            break
    return center


def robust_mean_objective(
    vectors: np.ndarray, center: np.ndarray, loss: RobustLoss | None = None
) -> float:
    """Summed robust loss of deviations from ``center``; the IRLS objective."""
    if loss is None:
        loss = RobustLoss()
    v = np.asarray(vectors, dtype=np.float64)
    squared = np.sum((v - np.asarray(center, dtype=np.float64)) ** 2, axis=1)
    values, _ = rho_of_squared(loss, squared)
    return float(values.sum())


def reference_feature(
    vectors: np.ndarray, loss: RobustLoss | None = None
) -> tuple[int, np.ndarray]:
    """Pick the member vector closest to the robust mean.

    Returns ``(index, vector)``. Ties on the distance resolve to the lowest
    index. The returned vector is the stored member itself, not the mean, so
    downstream consumers always compare against a real sample.
    """
    v = np.asarray(vectors, dtype=np.float64)
    center = robust_mean(v, loss=loss)
    distances = np.linalg.norm(v - center, axis=1)
    index = int(np.argmin(distances))
    return index, v[index].copy()
