"""Robust Levenberg-Marquardt least squares over heterogeneous blocks.

The problem is a set of parameter blocks (3-D points, camera poses,
intrinsics, or free vectors) tied together by residual blocks, each with a
nonnegative weight and an optional robust loss. The total cost is

    sum over residual blocks of  weight * rho(|r|^2)

where ``rho`` is the robust loss's squared-norm form (identity for plain
least squares). Minimization is Levenberg-Marquardt with multiplicative
damping (factor 2 up on a rejected step, 1/2 down on an accepted one) and
robustification by iteratively reweighted least squares: residuals and
Jacobians are scaled by sqrt(weight * rho'(|r|^2)) before forming the
normal equations, a first-order treatment of the robust kernel.

The normal equations are solved by dense Cholesky after a Schur complement
eliminates all point blocks; points dominate the variable count while the
camera-side blocks stay small, so the reduced system is tiny. Residual and
Jacobian evaluation is batched per residual kind (data-parallel arrays with
deterministic pairwise-summation reductions); the linear solve itself is
single-threaded. Problem structure is immutable during a solve and the
solver owns all parameter values between iterations.

Pose blocks store a unit quaternion (w, x, y, z) plus a translation and are
updated on the manifold: the 6-vector tangent step applies a right-
multiplied axis-angle rotation increment and an additive translation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    DuplicateKey,
    InvalidValue,
    NumericalFailure,
)
from .geometry import (
    DEPTH_EPSILON,
    axis_angle_to_quat,
    project_batch,
    project_jacobians_batch,
    quat_canonical,
    quat_conjugate,
    quat_multiply,
    quat_to_axis_angle,
    quat_to_matrix,
    so3_right_jacobian_inverse,
)
from .features import cost_lookup_batch
from .robust import RobustLoss, rho_of_squared

# Added to every diagonal entry (scaled by the damping parameter) so
# dimensions with zero curvature stay solvable and receive zero steps.
DAMPING_FLOOR = 1e-8

# Initial damping parameter of every solve.
INITIAL_DAMPING = 1e-4

# A step chain this long with no accepted step terminates the solve.
MAX_CONSECUTIVE_REJECTIONS = 25

_POSE_VALUE_DIM = 7
_KIND_INFO = {
    "pose": ("pose", 6),
    "intrinsics": ("intr", 4),
    "global_intrinsics": ("intr", 4),
    "point3": ("point", 3),
    "vector": ("vector", None),
}

RESIDUAL_KINDS = (
    "reprojection",
    "featuremetric",
    "rot_reg",
    "trans_reg",
    "intrinsics_var_focal",
    "intrinsics_var_pp",
    "custom",
)


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    """One residual term: a kind, its parameter block keys, and payload.

    ``weight`` is the full scalar multiplier on the robustified squared
    norm (any normalizers already folded in). ``data`` is kind-specific:

    - reprojection: ``(keypoint (2,),)``; params (pose, intrinsics, point3)
    - featuremetric: ``(patch_data (3,16,16), origin (2,))``; params as above
    - rot_reg / trans_reg: ``(gt_quaternion (4,),)`` / ``(gt_translation (3,),)``;
      params (pose,)
    - intrinsics_var_focal / intrinsics_var_pp: ``()``; params
      (frame intrinsics, global intrinsics)
    - custom: ``(callback,)`` mapping block values to
      ``(residual (r,), [jacobian (r, dim), ...])``; params arbitrary
    """

    kind: str
    params: tuple[Hashable, ...]
    weight: float
    loss: RobustLoss | None = None
    data: tuple = ()

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise InvalidValue("kind", f"unknown residual kind {self.kind!r}")
        if not math.isfinite(self.weight) or self.weight < 0:
            raise InvalidValue("weight", "must be finite and nonnegative")


@dataclass
class SolveReport:
    """Outcome of one solve: costs, iteration count, and termination."""

    initial_cost: float
    final_cost: float
    iterations: int
    termination: str  # converged | max_iters | stalled
    cost_history: list[float] = field(default_factory=list)
    dropped_residuals: int = 0


@dataclass
class _Block:
    key: Hashable
    kind: str
    storage: str
    index: int
    constant: bool
    tangent_dim: int


class _State:
    """Columnar snapshot of all parameter values."""

    __slots__ = ("pose_q", "pose_t", "intr", "points", "vectors", "_pose_r")

    def __init__(self, pose_q, pose_t, intr, points, vectors):
        self.pose_q = pose_q
        self.pose_t = pose_t
        self.intr = intr
        self.points = points
        self.vectors = vectors
        self._pose_r = None

    @property
    def pose_r(self) -> np.ndarray:
        if self._pose_r is None:
            self._pose_r = quat_to_matrix(self.pose_q)
        return self._pose_r

    def copy(self) -> "_State":
        return _State(
            self.pose_q.copy(),
            self.pose_t.copy(),
            self.intr.copy(),
            self.points.copy(),
            [v.copy() for v in self.vectors],
        )


class _Evaluation:
    __slots__ = ("residuals", "jacobians", "valid")

    def __init__(self, residuals, jacobians=None, valid=None):
        self.residuals = residuals
        self.jacobians = jacobians
        self.valid = valid


@dataclass
class _Slot:
    storage: str  # pose | intr | point | vector
    tangent_dim: int
    indices: np.ndarray  # (rows,) into the storage


class _Group:
    """A batch of same-kind residual blocks evaluated columnarly."""

    def __init__(self, kind: str, blocks: list[ResidualBlock], loss, rdim: int):
        self.kind = kind
        self.blocks = blocks
        self.loss = loss
        self.rdim = rdim
        self.weights = np.array([b.weight for b in blocks])
        self.slots: list[_Slot] = []

    @property
    def rows(self) -> int:
        return len(self.blocks)

    def evaluate(self, state: _State, want_jacobians: bool) -> _Evaluation:
        raise NotImplementedError


class _ReprojectionGroup(_Group):
    def __init__(self, blocks, loss, resolve):
        super().__init__("reprojection", blocks, loss, rdim=2)
        self.pose_idx = np.array([resolve(b.params[0], "pose") for b in blocks])
        self.intr_idx = np.array([resolve(b.params[1], "intr") for b in blocks])
        self.point_idx = np.array([resolve(b.params[2], "point") for b in blocks])
        self.keypoints = np.array([b.data[0] for b in blocks], dtype=np.float64)
        self.slots = [
            _Slot("pose", 6, self.pose_idx),
            _Slot("intr", 4, self.intr_idx),
            _Slot("point", 3, self.point_idx),
        ]

    def evaluate(self, state, want_jacobians):
        rot = state.pose_r[self.pose_idx]
        trans = state.pose_t[self.pose_idx]
        intr = state.intr[self.intr_idx]
        pts = state.points[self.point_idx]
        if not want_jacobians:
            pix, depth = project_batch(rot, trans, intr, pts)
            return _Evaluation(pix - self.keypoints, valid=depth > DEPTH_EPSILON)
        pix, depth, d_rot, d_trans, d_intr, d_point = project_jacobians_batch(
            rot, trans, intr, pts
        )
        j_pose = np.concatenate([d_rot, d_trans], axis=2)
        return _Evaluation(
            pix - self.keypoints,
            jacobians=[j_pose, d_intr, d_point],
            valid=depth > DEPTH_EPSILON,
        )


class _FeaturemetricGroup(_Group):
    def __init__(self, blocks, loss, resolve):
        super().__init__("featuremetric", blocks, loss, rdim=1)
        self.pose_idx = np.array([resolve(b.params[0], "pose") for b in blocks])
        self.intr_idx = np.array([resolve(b.params[1], "intr") for b in blocks])
        self.point_idx = np.array([resolve(b.params[2], "point") for b in blocks])
        self.patches = np.ascontiguousarray(
            np.array([b.data[0] for b in blocks], dtype=np.float64)
        )
        self.origins = np.array([b.data[1] for b in blocks], dtype=np.float64)
        self.slots = [
            _Slot("pose", 6, self.pose_idx),
            _Slot("intr", 4, self.intr_idx),
            _Slot("point", 3, self.point_idx),
        ]

    def evaluate(self, state, want_jacobians):
        rot = state.pose_r[self.pose_idx]
        trans = state.pose_t[self.pose_idx]
        intr = state.intr[self.intr_idx]
        pts = state.points[self.point_idx]
        if not want_jacobians:
            pix, depth = project_batch(rot, trans, intr, pts)
            cost, _, inside = cost_lookup_batch(self.patches, self.origins, pix)
            valid = inside & (depth > DEPTH_EPSILON)
            return _Evaluation(cost[:, None], valid=valid)
        pix, depth, d_rot, d_trans, d_intr, d_point = project_jacobians_batch(
            rot, trans, intr, pts
        )
        cost, grad, inside = cost_lookup_batch(self.patches, self.origins, pix)
        valid = inside & (depth > DEPTH_EPSILON)
        j_pose = np.concatenate([d_rot, d_trans], axis=2)
        jacobians = [
            np.einsum("mr,mrt->mt", grad, j)[:, None, :]
            for j in (j_pose, d_intr, d_point)
        ]
        return _Evaluation(cost[:, None], jacobians=jacobians, valid=valid)


class _RotRegGroup(_Group):
    def __init__(self, blocks, loss, resolve):
        super().__init__("rot_reg", blocks, loss, rdim=3)
        self.pose_idx = np.array([resolve(b.params[0], "pose") for b in blocks])
        gt_q = np.array([b.data[0] for b in blocks], dtype=np.float64)
        self.gt_q_conj = quat_conjugate(gt_q)
        self.gt_aa = quat_to_axis_angle(gt_q)
        # "geodesic": residual is Log(gt^-1 * q), the relative rotation.
        # "literal": residual is the plain axis-angle difference Log(q) - Log(gt).
        self.literal = any(
            len(b.data) > 1 and b.data[1] == "literal" for b in blocks
        )
        self.slots = [_Slot("pose", 6, self.pose_idx)]

    def evaluate(self, state, want_jacobians):
        q = state.pose_q[self.pose_idx]
        if self.literal:
            own = quat_to_axis_angle(q)
            residual = own - self.gt_aa
            chart_point = own
        else:
            residual = quat_to_axis_angle(quat_multiply(self.gt_q_conj, q))
            chart_point = residual
        if not want_jacobians:
            return _Evaluation(residual)
        j = np.zeros((len(self.blocks), 3, 6))
        j[:, :, :3] = so3_right_jacobian_inverse(chart_point)
        return _Evaluation(residual, jacobians=[j])


class _TransRegGroup(_Group):
    def __init__(self, blocks, loss, resolve):
        super().__init__("trans_reg", blocks, loss, rdim=3)
        self.pose_idx = np.array([resolve(b.params[0], "pose") for b in blocks])
        self.gt_t = np.array([b.data[0] for b in blocks], dtype=np.float64)
        self.slots = [_Slot("pose", 6, self.pose_idx)]

    def evaluate(self, state, want_jacobians):
        r = state.pose_t[self.pose_idx] - self.gt_t
        if not want_jacobians:
            return _Evaluation(r)
        j = np.zeros((len(self.blocks), 3, 6))
        j[:, 0, 3] = 1.0
        j[:, 1, 4] = 1.0
        j[:, 2, 5] = 1.0
        return _Evaluation(r, jacobians=[j])


class _IntrinsicsVarGroup(_Group):
    def __init__(self, kind, blocks, loss, resolve):
        super().__init__(kind, blocks, loss, rdim=2)
        self.lo = 0 if kind == "intrinsics_var_focal" else 2
        self.frame_idx = np.array([resolve(b.params[0], "intr") for b in blocks])
        self.global_idx = np.array([resolve(b.params[1], "intr") for b in blocks])
        self.slots = [
            _Slot("intr", 4, self.frame_idx),
            _Slot("intr", 4, self.global_idx),
        ]

    def evaluate(self, state, want_jacobians):
        sel = slice(self.lo, self.lo + 2)
        r = state.intr[self.frame_idx, sel] - state.intr[self.global_idx, sel]
        if not want_jacobians:
            return _Evaluation(r)
        m = len(self.blocks)
        j_frame = np.zeros((m, 2, 4))
        j_frame[:, 0, self.lo] = 1.0
        j_frame[:, 1, self.lo + 1] = 1.0
        return _Evaluation(r, jacobians=[j_frame, -j_frame])


class _CustomGroup(_Group):
    """A single callback-defined residual block (test and utility use)."""

    def __init__(self, block: ResidualBlock, loss, blocks_table):
        self._callback = block.data[0]
        self._entries = [blocks_table[key] for key in block.params]
        super().__init__("custom", [block], loss, rdim=int(block.data[1]))
        self.slots = [
            _Slot(e.storage, e.tangent_dim, np.array([e.index]))
            for e in self._entries
        ]

    def _values(self, state):
        out = []
        for e in self._entries:
            if e.storage == "pose":
                out.append(
                    np.concatenate([state.pose_q[e.index], state.pose_t[e.index]])
                )
            elif e.storage == "intr":
                out.append(state.intr[e.index].copy())
            elif e.storage == "point":
                out.append(state.points[e.index].copy())
            else:
                out.append(state.vectors[e.index].copy())
        return out

    def evaluate(self, state, want_jacobians):
        result = self._callback(*self._values(state))
        residual, jacobians = result
        residual = np.atleast_1d(np.asarray(residual, dtype=np.float64))[None, :]
        if residual.shape[1] != self.rdim:
            raise DimensionMismatch(
                f"custom residual returned {residual.shape[1]} values, "
                f"declared {self.rdim}"
            )
        if not want_jacobians:
            return _Evaluation(residual)
        jac = [
            np.asarray(j, dtype=np.float64).reshape(1, self.rdim, s.tangent_dim)
            for j, s in zip(jacobians, self.slots)
        ]
        return _Evaluation(residual, jacobians=jac)


@dataclass
class _SlotCache:
    mask: np.ndarray  # (rows,) 1.0 free / 0.0 constant
    flat: np.ndarray | None  # gradient scatter indices, cam side
    point_flat: np.ndarray | None  # gradient scatter indices, point side


@dataclass
class _PairCache:
    a: int
    b: int
    target: str  # cc | cp | pp
    flat: np.ndarray
    flat_t: np.ndarray | None  # transpose scatter for distinct cam-cam pairs


class Problem:
    """A nonlinear least-squares problem over typed parameter blocks."""

    def __init__(self):
        self._blocks: dict[Hashable, _Block] = {}
        self._pose_q: list[np.ndarray] = []
        self._pose_t: list[np.ndarray] = []
        self._intr: list[np.ndarray] = []
        self._points: list[np.ndarray] = []
        self._vectors: list[np.ndarray] = []
        self._residuals: list[ResidualBlock] = []

    # -- construction ------------------------------------------------------

    def add_parameter_block(
        self, key: Hashable, kind: str, value, constant: bool = False
    ) -> None:
        if key in self._blocks:
            raise DuplicateKey(key)
        if kind not in _KIND_INFO:
            raise InvalidValue("kind", f"unknown parameter kind {kind!r}")
        storage, tangent = _KIND_INFO[kind]
        if storage == "pose":
            q, t = self._pose_value(value)
            index = len(self._pose_q)
            self._pose_q.append(q)
            self._pose_t.append(t)
        elif storage == "intr":
            arr = self._checked(value, 4, key)
            index = len(self._intr)
            self._intr.append(arr)
        elif storage == "point":
            arr = self._checked(value, 3, key)
            index = len(self._points)
            self._points.append(arr)
        else:
            arr = np.array(value, dtype=np.float64).reshape(-1)
            if arr.size == 0:
                raise InvalidValue(str(key), "vector block may not be empty")
            index = len(self._vectors)
            self._vectors.append(arr)
            tangent = arr.size
        self._blocks[key] = _Block(key, kind, storage, index, constant, tangent)

    @staticmethod
    def _pose_value(value) -> tuple[np.ndarray, np.ndarray]:
        if hasattr(value, "rotation") and hasattr(value, "translation"):
            q = np.array(value.rotation, dtype=np.float64)
            t = np.array(value.translation, dtype=np.float64)
        else:
            arr = np.asarray(value, dtype=np.float64).reshape(-1)
            if arr.size != _POSE_VALUE_DIM:
                raise DimensionMismatch(
                    f"pose blocks take 7 values, got {arr.size}"
                )
            q, t = arr[:4].copy(), arr[4:].copy()
        norm = float(np.linalg.norm(q))
        if not np.isfinite(norm) or norm == 0.0:
            raise InvalidValue("pose", "quaternion must be finite and nonzero")
        return quat_canonical(q / norm), t

    @staticmethod
    def _checked(value, size: int, key) -> np.ndarray:
        arr = np.array(value, dtype=np.float64).reshape(-1)
        if arr.size != size:
            raise DimensionMismatch(f"block {key!r} expects {size} values, got {arr.size}")
        return arr

    def add_residual_block(self, block: ResidualBlock) -> None:
        for key in block.params:
            if key not in self._blocks:
                raise InvalidValue("params", f"unknown parameter block {key!r}")
        if block.kind != "custom":
            expected = {
                "reprojection": ("pose", "intr", "point"),
                "featuremetric": ("pose", "intr", "point"),
                "rot_reg": ("pose",),
                "trans_reg": ("pose",),
                "intrinsics_var_focal": ("intr", "intr"),
                "intrinsics_var_pp": ("intr", "intr"),
            }[block.kind]
            got = tuple(self._blocks[k].storage for k in block.params)
            if got != expected:
                raise InvalidValue(
                    "params", f"{block.kind} expects block kinds {expected}, got {got}"
                )
        self._residuals.append(block)

    def set_constant(self, key: Hashable, constant: bool = True) -> None:
        self._blocks[key].constant = constant

    def block_keys(self) -> list[Hashable]:
        return list(self._blocks)

    # -- value access ------------------------------------------------------

    def get_value(self, key: Hashable) -> np.ndarray:
        b = self._blocks[key]
        if b.storage == "pose":
            return np.concatenate([self._pose_q[b.index], self._pose_t[b.index]])
        if b.storage == "intr":
            return self._intr[b.index].copy()
        if b.storage == "point":
            return self._points[b.index].copy()
        return self._vectors[b.index].copy()

    def get_pose(self, key: Hashable) -> tuple[np.ndarray, np.ndarray]:
        b = self._blocks[key]
        if b.storage != "pose":
            raise InvalidValue(str(key), "not a pose block")
        return self._pose_q[b.index].copy(), self._pose_t[b.index].copy()

    def set_value(self, key: Hashable, value) -> None:
        b = self._blocks[key]
        if b.storage == "pose":
            q, t = self._pose_value(value)
            self._pose_q[b.index] = q
            self._pose_t[b.index] = t
        elif b.storage == "vector":
            arr = np.array(value, dtype=np.float64).reshape(-1)
            if arr.size != b.tangent_dim:
                raise DimensionMismatch(
                    f"block {key!r} expects {b.tangent_dim} values, got {arr.size}"
                )
            self._vectors[b.index] = arr
        else:
            target = self._intr if b.storage == "intr" else self._points
            target[b.index] = self._checked(value, b.tangent_dim, key)

    # -- evaluation --------------------------------------------------------

    def _make_state(self) -> _State:
        def stack(rows, width):
            if rows:
                return np.array(rows, dtype=np.float64)
            return np.zeros((0, width), dtype=np.float64)

        return _State(
            stack(self._pose_q, 4),
            stack(self._pose_t, 3),
            stack(self._intr, 4),
            stack(self._points, 3),
            [v.copy() for v in self._vectors],
        )

    def _store_state(self, state: _State) -> None:
        for i in range(len(self._pose_q)):
            self._pose_q[i] = quat_canonical(state.pose_q[i])
            self._pose_t[i] = state.pose_t[i].copy()
        for i in range(len(self._intr)):
            self._intr[i] = state.intr[i].copy()
        for i in range(len(self._points)):
            self._points[i] = state.points[i].copy()
        self._vectors = [v.copy() for v in state.vectors]

    def _compile(self) -> list[_Group]:
        def resolve(key, storage):
            b = self._blocks[key]
            if b.storage != storage:
                raise InvalidValue(
                    "params", f"block {key!r} is {b.storage}, expected {storage}"
                )
            return b.index

        buckets: dict[tuple, list[ResidualBlock]] = {}
        order: list[tuple] = []
        for block in self._residuals:
            if block.weight == 0.0:
                continue
            # rot_reg blocks additionally bucket by residual variant so one
            # problem can mix geodesic and literal regularizers.
            variant = (
                block.data[1:2] if block.kind == "rot_reg" else ()
            )
            key = (block.kind, block.loss, variant)
            if key not in buckets:
                buckets[key] = []
                order.append(key)
            buckets[key].append(block)

        groups: list[_Group] = []
        for kind, loss, _variant in order:
            blocks = buckets[(kind, loss, _variant)]
            if kind == "reprojection":
                groups.append(_ReprojectionGroup(blocks, loss, resolve))
            elif kind == "featuremetric":
                groups.append(_FeaturemetricGroup(blocks, loss, resolve))
            elif kind == "rot_reg":
                groups.append(_RotRegGroup(blocks, loss, resolve))
            elif kind == "trans_reg":
                groups.append(_TransRegGroup(blocks, loss, resolve))
            elif kind in ("intrinsics_var_focal", "intrinsics_var_pp"):
                groups.append(_IntrinsicsVarGroup(kind, blocks, loss, resolve))
            else:
                for b in blocks:
                    groups.append(_CustomGroup(b, loss, self._blocks))
        return groups

    @staticmethod
    def _group_cost(group: _Group, ev: _Evaluation) -> tuple[float, int]:
        s = np.sum(ev.residuals * ev.residuals, axis=1)
        if group.loss is None:
            rho = s
        else:
            rho, _ = rho_of_squared(group.loss, s)
        dropped = 0
        if ev.valid is not None:
            rho = np.where(ev.valid, rho, 0.0)
            dropped = int(np.size(ev.valid) - np.count_nonzero(ev.valid))
        return float(np.sum(group.weights * rho)), dropped

    def _total_cost(self, groups: list[_Group], state: _State) -> tuple[float, int]:
        total = 0.0
        dropped = 0
        for g in groups:
            c, d = self._group_cost(g, g.evaluate(state, want_jacobians=False))
            total += c
            dropped += d
        return total, dropped

    def cost(self) -> float:
        """Evaluate the total objective at the current parameter values."""
        groups = self._compile()
        total, _ = self._total_cost(groups, self._make_state())
        return total

    # -- offsets, caches, assembly ------------------------------------------

    def _assign_offsets(self):
        pose_off = np.full(len(self._pose_q), -1, dtype=np.int64)
        intr_off = np.full(len(self._intr), -1, dtype=np.int64)
        vector_off = np.full(len(self._vectors), -1, dtype=np.int64)
        point_off = np.full(len(self._points), -1, dtype=np.int64)
        c_dim = 0
        n_free_points = 0
        for b in self._blocks.values():
            if b.constant:
                continue
            if b.storage == "pose":
                pose_off[b.index] = c_dim
                c_dim += 6
            elif b.storage == "intr":
                intr_off[b.index] = c_dim
                c_dim += 4
            elif b.storage == "vector":
                vector_off[b.index] = c_dim
                c_dim += b.tangent_dim
            else:
                point_off[b.index] = 3 * n_free_points
                n_free_points += 1
        offsets = {"pose": pose_off, "intr": intr_off, "vector": vector_off,
                   "point": point_off}
        return offsets, c_dim, n_free_points

    @staticmethod
    def _slot_cache(slot: _Slot, offsets, p_dim: int) -> _SlotCache:
        off = offsets[slot.storage][slot.indices]
        mask = (off >= 0).astype(np.float64)
        safe = np.maximum(off, 0)
        ar = np.arange(slot.tangent_dim, dtype=np.int64)
        flat = (safe[:, None] + ar[None, :]).ravel()
        if slot.storage == "point":
            return _SlotCache(mask, None, flat)
        return _SlotCache(mask, flat, None)

    @staticmethod
    def _pair_cache(
        sa: _Slot, sb: _Slot, ca: _SlotCache, cb: _SlotCache, a: int, b: int,
        c_dim: int, p_dim: int,
    ) -> _PairCache | None:
        ta, tb = sa.tangent_dim, sb.tangent_dim
        rows = len(sa.indices)
        a_point = sa.storage == "point"
        b_point = sb.storage == "point"
        fa = (ca.point_flat if a_point else ca.flat).reshape(rows, ta)
        fb = (cb.point_flat if b_point else cb.flat).reshape(rows, tb)
        if a_point and b_point:
            if a != b:
                raise DegenerateConfiguration(
                    "residual blocks may reference at most one point block"
                )
            # Point self-blocks land in the (n_points, 3, 3) diagonal store:
            # flat index = point rank * 9 + i * 3 + j.
            base = (fa[:, :1, None] // 3) * 9
            i = np.arange(3, dtype=np.int64)
            flat = (base + i[None, :, None] * 3 + i[None, None, :]).ravel()
            return _PairCache(a, b, "pp", flat, None)
        if not a_point and not b_point:
            flat = (fa[:, :, None] * c_dim + fb[:, None, :]).ravel()
            flat_t = None
            if a != b:
                flat_t = (fb[:, :, None] * c_dim + fa[:, None, :]).ravel()
            return _PairCache(a, b, "cc", flat, flat_t)
        # One camera-side slot, one point slot: route into E (c_dim x p_dim).
        if a_point:
            fa, fb = fb, fa
            ta, tb = tb, ta
        flat = (fa[:, :, None] * p_dim + fb[:, None, :]).ravel()
        return _PairCache(a, b, "cp" if not a_point else "pc", flat, None)

    # -- the solver ---------------------------------------------------------

    def solve(
        self,
        max_iterations: int = 20,
        tolerance: float = 1e-9,
        initial_damping: float = INITIAL_DAMPING,
    ) -> SolveReport:
        """Run damped Gauss-Newton iterations until relative convergence.

        Terminates with ``converged`` when an accepted step decreases the
        cost by less than ``tolerance`` relative to the previous cost, with
        ``max_iters`` when the iteration budget is exhausted, and with
        ``stalled`` after a long chain of consecutive rejected steps.
        """
        if max_iterations < 1:
            raise InvalidValue("max_iterations", "must be at least 1")
        if not any(not b.constant for b in self._blocks.values()):
            raise DegenerateConfiguration("no free parameter blocks to solve for")
        groups = self._compile()
        offsets, c_dim, n_free_points = self._assign_offsets()
        p_dim = 3 * n_free_points

        slot_caches: list[list[_SlotCache]] = []
        pair_caches: list[list[_PairCache]] = []
        for g in groups:
            caches = [self._slot_cache(s, offsets, p_dim) for s in g.slots]
            slot_caches.append(caches)
            pairs = []
            for a in range(len(g.slots)):
                for b in range(a, len(g.slots)):
                    pairs.append(
                        self._pair_cache(
                            g.slots[a], g.slots[b], caches[a], caches[b],
                            a, b, c_dim, p_dim,
                        )
                    )
            pair_caches.append(pairs)

        state = self._make_state()
        cost, dropped = self._total_cost(groups, state)
        if not math.isfinite(cost):
            self._raise_nonfinite(groups, state)
        report = SolveReport(
            initial_cost=cost,
            final_cost=cost,
            iterations=0,
            termination="converged",
            cost_history=[cost],
            dropped_residuals=dropped,
        )
        if cost == 0.0:
            self._store_state(state)
            return report

        mu = initial_damping
        rejections = 0
        termination = None
        iterations = 0
        gather = self._build_gather(offsets, c_dim)

        while iterations < max_iterations:
            iterations += 1
            system = self._assemble(groups, slot_caches, pair_caches, state,
                                    c_dim, p_dim)
            if system is None:
                self._raise_nonfinite(groups, state, jacobians=True)
            step = self._solve_step(system, mu, c_dim, p_dim)
            if step is None:
                mu *= 2.0
                rejections += 1
                if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                    termination = "stalled"
                    break
                continue
            delta_c, delta_p = step
            trial = self._retract(state, delta_c, delta_p, gather, offsets)
            trial_cost, trial_dropped = self._total_cost(groups, trial)
            if math.isfinite(trial_cost) and trial_cost <= cost:
                decrease = cost - trial_cost
                previous = cost
                state = trial
                cost = trial_cost
                report.cost_history.append(cost)
                report.dropped_residuals = trial_dropped
                mu = max(mu * 0.5, 1e-15)
                rejections = 0
                if decrease < tolerance * max(previous, 1e-300):
                    termination = "converged"
                    break
            else:
                mu *= 2.0
                rejections += 1
                if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                    termination = "stalled"
                    break

        report.final_cost = cost
        report.iterations = iterations
        report.termination = termination or "max_iters"
        if report.final_cost > report.initial_cost + 1e-12:
            raise NumericalFailure(
                f"cost increased from {report.initial_cost} to {report.final_cost}"
            )
        self._store_state(state)
        return report

    # -- internals ---------------------------------------------------------

    def _build_gather(self, offsets, c_dim):
        """Static index arrays mapping the step vector onto each storage."""

        def table(off, width):
            n = len(off)
            idx = np.zeros((n, width), dtype=np.int64)
            mask = np.zeros((n, width), dtype=np.float64)
            for i, o in enumerate(off):
                if o >= 0:
                    idx[i] = o + np.arange(width)
                    mask[i] = 1.0
            return idx, mask

        pose_idx, pose_mask = table(offsets["pose"], 6)
        intr_idx, intr_mask = table(offsets["intr"], 4)
        return {"pose": (pose_idx, pose_mask), "intr": (intr_idx, intr_mask)}

    def _retract(self, state, delta_c, delta_p, gather, offsets):
        """Apply a tangent step; blocks with an exactly zero step keep
        their values bit-identical (constant blocks always do)."""
        new = state.copy()
        if len(self._pose_q) and delta_c.size:
            idx, mask = gather["pose"]
            d6 = delta_c[idx] * mask
            moved = np.any(d6 != 0.0, axis=1)
            if np.any(moved):
                dq = axis_angle_to_quat(d6[:, :3])
                q_new = quat_multiply(state.pose_q, dq)
                q_new = q_new / np.linalg.norm(q_new, axis=1, keepdims=True)
                new.pose_q = np.where(moved[:, None], q_new, state.pose_q)
                new.pose_t = np.where(
                    moved[:, None], state.pose_t + d6[:, 3:], state.pose_t
                )
        if len(self._intr) and delta_c.size:
            idx, mask = gather["intr"]
            d4 = delta_c[idx] * mask
            new.intr = np.where(d4 != 0.0, state.intr + d4, state.intr)
        if len(self._points) and delta_p.size:
            off = offsets["point"]
            free = off >= 0
            if np.any(free):
                dp = np.zeros_like(state.points)
                dp[free] = delta_p[off[free][:, None] + np.arange(3)]
                new.points = np.where(dp != 0.0, state.points + dp, state.points)
        if delta_c.size:
            for i, off in enumerate(offsets["vector"]):
                if off >= 0:
                    width = self._vectors[i].size
                    step = delta_c[off : off + width]
                    if np.any(step != 0.0):
                        new.vectors[i] = state.vectors[i] + step
        return new

    def _assemble(self, groups, slot_caches, pair_caches, state, c_dim, p_dim):
        h_cc = np.zeros(c_dim * c_dim)
        g_c = np.zeros(c_dim)
        e_cp = np.zeros(c_dim * p_dim) if p_dim else None
        h_pp = np.zeros(3 * p_dim)  # 9 entries per free point
        g_p = np.zeros(p_dim)

        for g, scaches, pcaches in zip(groups, slot_caches, pair_caches):
            ev = g.evaluate(state, want_jacobians=True)
            r = ev.residuals
            if not np.all(np.isfinite(r)):
                return None
            s = np.sum(r * r, axis=1)
            if g.loss is None:
                deriv = np.ones_like(s)
            else:
                _, deriv = rho_of_squared(g.loss, s)
            alpha = np.sqrt(g.weights * deriv)
            if ev.valid is not None:
                alpha = np.where(ev.valid, alpha, 0.0)
            r_s = alpha[:, None] * r
            j_s = []
            for j in ev.jacobians:
                if not np.all(np.isfinite(j)):
                    return None
                j_s.append(alpha[:, None, None] * j)

            for slot_i, (slot, cache) in enumerate(zip(g.slots, scaches)):
                contrib = np.einsum("mri,mr->mi", j_s[slot_i], r_s)
                contrib *= cache.mask[:, None]
                if slot.storage == "point":
                    if p_dim:
                        g_p += np.bincount(
                            cache.point_flat, weights=contrib.ravel(), minlength=p_dim
                        )[:p_dim]
                elif c_dim:
                    g_c += np.bincount(
                        cache.flat, weights=contrib.ravel(), minlength=c_dim
                    )[:c_dim]

            pair_iter = iter(pcaches)
            for a in range(len(g.slots)):
                for b in range(a, len(g.slots)):
                    pc = next(pair_iter)
                    needed = {
                        "cc": c_dim,
                        "pp": p_dim,
                        "cp": c_dim and p_dim,
                        "pc": c_dim and p_dim,
                    }[pc.target]
                    if not needed:
                        continue
                    contrib = np.matmul(j_s[a].transpose(0, 2, 1), j_s[b])
                    pair_mask = scaches[a].mask * scaches[b].mask
                    contrib *= pair_mask[:, None, None]
                    # constant slots scatter through clamped indices that may
                    # exceed the target size; their weights are zero, so the
                    # slice below drops them
                    if pc.target == "cc":
                        h_cc += np.bincount(
                            pc.flat, weights=contrib.ravel(), minlength=c_dim * c_dim
                        )[: c_dim * c_dim]
                        if pc.flat_t is not None:
                            h_cc += np.bincount(
                                pc.flat_t,
                                weights=contrib.transpose(0, 2, 1).ravel(),
                                minlength=c_dim * c_dim,
                            )[: c_dim * c_dim]
                    elif pc.target == "pp":
                        h_pp += np.bincount(
                            pc.flat, weights=contrib.ravel(), minlength=3 * p_dim
                        )[: 3 * p_dim]
                    elif e_cp is not None:
                        if pc.target == "pc":
                            contrib = contrib.transpose(0, 2, 1)
                        e_cp += np.bincount(
                            pc.flat, weights=contrib.ravel(), minlength=c_dim * p_dim
                        )[: c_dim * p_dim]
        return h_cc.reshape(c_dim, c_dim), g_c, e_cp, h_pp, g_p

    @staticmethod
    def _solve_step(system, mu, c_dim, p_dim):
        h_cc, g_c, e_flat, h_pp, g_p = system
        n_pts = p_dim // 3

        if n_pts:
            c_blocks = h_pp.reshape(n_pts, 3, 3).copy()
            diag = np.arange(3)
            c_blocks[:, diag, diag] += mu * (c_blocks[:, diag, diag] + DAMPING_FLOOR)
            try:
                np.linalg.cholesky(c_blocks)
                c_inv = np.linalg.inv(c_blocks)
            except np.linalg.LinAlgError:
                return None
        h_d = h_cc.copy()
        if c_dim:
            d = np.arange(c_dim)
            h_d[d, d] += mu * (h_d[d, d] + DAMPING_FLOOR)

        if c_dim == 0:
            delta_c = np.zeros(0)
            if n_pts:
                rhs = -g_p.reshape(n_pts, 3, 1)
                delta_p = np.matmul(c_inv, rhs)[:, :, 0].ravel()
                return delta_c, delta_p
            return None

        if n_pts:
            e3 = e_flat.reshape(c_dim, n_pts, 3)
            w = np.matmul(e3.transpose(1, 0, 2), c_inv)  # (n, C, 3)
            w2 = w.transpose(1, 0, 2).reshape(c_dim, p_dim)
            s_mat = h_d - w2 @ e_flat.reshape(c_dim, p_dim).T
            rhs = -g_c + w2 @ g_p
        else:
            s_mat = h_d
            rhs = -g_c
        try:
            factor = scipy.linalg.cho_factor(s_mat, lower=True, check_finite=False)
            delta_c = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(delta_c)):
            return None
        if n_pts:
            t = g_p.reshape(n_pts, 3) + np.einsum(
                "cnk,c->nk", e_flat.reshape(c_dim, n_pts, 3), delta_c
            )
            delta_p = -np.matmul(c_inv, t[:, :, None])[:, :, 0].ravel()
        else:
            delta_p = np.zeros(0)
        return delta_c, delta_p

    def _raise_nonfinite(self, groups, state, jacobians=False):
        for g in groups:
            ev = g.evaluate(state, want_jacobians=jacobians)
            bad = ~np.all(np.isfinite(ev.residuals), axis=1)
            if jacobians and ev.jacobians is not None:
                for j in ev.jacobians:
                    bad |= ~np.all(np.isfinite(j), axis=(1, 2))
            rows = np.nonzero(bad)[0]
            if rows.size:
                block = g.blocks[min(int(rows[0]), len(g.blocks) - 1)]
                raise NumericalFailure(
                    "non-finite residual or Jacobian",
                    residual_id=f"{block.kind}{block.params!r}",
                )
        raise NumericalFailure("non-finite total cost")
