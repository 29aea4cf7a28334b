"""Objective assembly: term builders, normalizers, and the dual evaluator."""
from __future__ import annotations

import math

import numpy as np
import pytest

from domecal.errors import InvalidValue, MissingCamera
from domecal.features import CostPatch, PatchStore
from domecal.model import (
    Camera,
    Extrinsics,
    FrameModel,
    Intrinsics,
    Observation,
    Rig,
    TrackedPoint,
)
from domecal.objective import (
    assemble,
    build_extrinsics_reg,
    build_featuremetric_term,
    build_intrinsics_variance,
    build_reprojection_term,
    evaluate_objective,
    global_intrinsics_key,
    intrinsics_key,
)
from domecal.pipeline import initialize_global_intrinsics
from domecal.robust import RobustLoss, rho
from domecal.solver import Problem
from domecal.synthetic import NoiseSpec, generate_dome

from conftest import identity_pose, make_two_camera_frame
from oracles import cauchy_value


class Weights:
    """Attribute bag matching the schedule interface."""

    def __init__(self, **kw):
        defaults = dict(lambda0=1.0, lambda1=0.01, lambda2=0.01,
                        lambda3=0.01, lambda4=0.02, lambda5=0.02)
        defaults.update(kw)
        for key, value in defaults.items():
            setattr(self, key, value)


def bowl_store(frame, curvature=1.0, center_shift=(0.0, 0.0)):
    """Cost patches with quadratic bowls centered near each observation."""
    store = PatchStore(kind="cost", channel_count=3)
    for point in frame.points:
        for obs in point.track:
            pose = frame.per_camera_pose[obs.camera_id]
            k = frame.per_camera_intrinsics[obs.camera_id]
            xc = pose.matrix() @ point.position + pose.translation
            pix = np.array([k.fx * xc[0] / xc[2] + k.cx,
                            k.fy * xc[1] / xc[2] + k.cy])
            center = pix + center_shift
            origin = (int(math.floor(pix[0] + 0.5)) - 8,
                      int(math.floor(pix[1] + 0.5)) - 8)
            u = origin[0] + np.arange(16.0) + 0.5
            v = origin[1] + np.arange(16.0) + 0.5
            du = u[None, :] - center[0]
            dv = v[:, None] - center[1]
            cost = curvature * (du * du + dv * dv)
            gu = 2.0 * curvature * np.broadcast_to(du, (16, 16))
            gv = 2.0 * curvature * np.broadcast_to(dv, (16, 16))
            store.add(CostPatch(
                frame_id=frame.frame_id, camera_id=obs.camera_id,
                keypoint_index=obs.cost_patch_id, origin=origin,
                data=np.stack([cost, gu, gv], axis=2),
            ))
    return store


class TestReprojectionTerm:
    def test_exact_frame_has_zero_value(self):
        rig, frame = make_two_camera_frame()
        blocks = build_reprojection_term(frame, lambda0=1.0)
        problem = Problem()
        problem.add_parameter_block(("pose", 0, 0), "pose",
                                    frame.per_camera_pose[0])
        problem.add_parameter_block(("pose", 0, 1), "pose",
                                    frame.per_camera_pose[1])
        for cid in (0, 1):
            problem.add_parameter_block(
                ("intr", 0, cid), "intrinsics",
                frame.per_camera_intrinsics[cid].as_array(),
            )
        for point in frame.points:
            problem.add_parameter_block(("pt", 0, point.point_id), "point3",
                                        point.position)
        for block in blocks:
            problem.add_residual_block(block)
        assert problem.cost() == 0.0

    def test_per_residual_weight_uses_observation_count(self):
        # 3 points seen by 4 cameras = 12 observations
        poses = {c: identity_pose() if c == 0 else Extrinsics(
            np.array([1.0, 0, 0, 0]), np.array([0.1 * c, 0.0, 0.0])
        ) for c in range(4)}
        intr = {c: Intrinsics(1000.0, 1000.0, 640.0, 480.0) for c in range(4)}
        tracked = []
        for pid in range(3):
            x = np.array([0.1 * pid, -0.05, 2.0])
            track = tuple(
                Observation(camera_id=c, keypoint=np.array([640.0, 480.0]))
                for c in range(4)
            )
            tracked.append(TrackedPoint(point_id=pid, position=x, track=track))
        frame = FrameModel(frame_id=0, per_camera_pose=poses,
                           per_camera_intrinsics=intr, points=tuple(tracked))
        assert frame.observation_count() == 12
        blocks = build_reprojection_term(frame, lambda0=1.0)
        assert len(blocks) == 12
        for block in blocks:
            assert block.weight == 1.0 / 12.0

    def test_zero_weight_emits_nothing(self):
        _, frame = make_two_camera_frame()
        assert build_reprojection_term(frame, lambda0=0.0) == []

    def test_doubling_tracks_leaves_value_unchanged(self):
        rig, frame = make_two_camera_frame(keypoint_shift=0.8)
        doubled_points = tuple(
            TrackedPoint(point_id=p.point_id, position=p.position,
                         track=p.track + p.track)
            for p in frame.points
        )
        doubled = FrameModel(
            frame_id=frame.frame_id,
            per_camera_pose=frame.per_camera_pose,
            per_camera_intrinsics=frame.per_camera_intrinsics,
            points=doubled_points,
        )
        rig2 = Rig(cameras=rig.cameras, frames=(doubled,),
                   global_intrinsics=rig.global_intrinsics)
        weights = Weights(lambda1=0.0, lambda2=0.0, lambda4=0.0, lambda5=0.0)
        a = evaluate_objective(rig, weights, feature_mode="none").total
        b = evaluate_objective(rig2, weights, feature_mode="none").total
        assert a > 0
        assert b == pytest.approx(a, rel=1e-12)


class TestExtrinsicsReg:
    def test_zero_at_ground_truth(self):
        rig, frame = make_two_camera_frame()
        weights = Weights(lambda0=0.0, lambda3=0.0, lambda4=0.0, lambda5=0.0)
        out = evaluate_objective(rig, weights, feature_mode="none")
        assert out.total == 0.0

    def test_translation_value_closed_form(self):
        # one of two cameras translated by (0.3, 0, 0), lambda2 = 0.01:
        # value = (0.01 / 2) * 0.0625 * ln(1 + (0.3/0.25)^2)
        rig, frame = make_two_camera_frame()
        poses = dict(frame.per_camera_pose)
        poses[1] = Extrinsics(
            poses[1].rotation, poses[1].translation + np.array([0.3, 0.0, 0.0])
        )
        moved = FrameModel(
            frame_id=frame.frame_id, per_camera_pose=poses,
            per_camera_intrinsics=frame.per_camera_intrinsics,
            points=frame.points,
        )
        rig2 = Rig(cameras=rig.cameras, frames=(moved,))
        weights = Weights(lambda0=0.0, lambda1=0.0, lambda2=0.01,
                          lambda3=0.0, lambda4=0.0, lambda5=0.0)
        out = evaluate_objective(rig2, weights, feature_mode="none")
        expected = 0.005 * cauchy_value(0.3, 0.25)
        assert out.total == pytest.approx(expected, rel=1e-12)
        assert out.total == pytest.approx(0.000278749387282847, rel=1e-12)

    def test_zero_weights_emit_no_blocks(self):
        _, frame = make_two_camera_frame()
        gt = {0: frame.per_camera_pose[0], 1: frame.per_camera_pose[1]}
        assert build_extrinsics_reg(frame, gt, 0.0, 0.0) == []

    def test_missing_camera(self):
        _, frame = make_two_camera_frame()
        gt = {0: frame.per_camera_pose[0]}
        with pytest.raises(MissingCamera):
            build_extrinsics_reg(frame, gt, 0.01, 0.01)

    def test_block_weights_normalized_by_camera_count(self):
        _, frame = make_two_camera_frame()
        gt = {0: frame.per_camera_pose[0], 1: frame.per_camera_pose[1]}
        blocks = build_extrinsics_reg(frame, gt, 0.03, 0.05)
        rot = [b for b in blocks if b.kind == "rot_reg"]
        trans = [b for b in blocks if b.kind == "trans_reg"]
        assert len(rot) == len(trans) == 2
        assert all(b.weight == 0.03 / 2 for b in rot)
        assert all(b.weight == 0.05 / 2 for b in trans)

    def test_literal_variant_tags_blocks(self):
        _, frame = make_two_camera_frame()
        gt = {0: frame.per_camera_pose[0], 1: frame.per_camera_pose[1]}
        blocks = build_extrinsics_reg(
            frame, gt, 0.01, 0.0, rotation_residual="literal"
        )
        assert all(b.data[1] == "literal" for b in blocks)
        with pytest.raises(InvalidValue):
            build_extrinsics_reg(frame, gt, 0.01, 0.0, rotation_residual="x")


class TestFeaturemetricTerm:
    def test_zero_at_bowl_minima(self):
        rig, frame = make_two_camera_frame()
        store = bowl_store(frame)
        weights = Weights(lambda0=0.0, lambda1=0.0, lambda2=0.0,
                          lambda3=0.01, lambda4=0.0, lambda5=0.0)
        out = evaluate_objective(rig, weights, store=store)
        # interpolating the quadratic at its own minimum leaves only
        # cancellation dust, squared by the robust loss
        assert out.total < 1e-20

    def test_displaced_projection_costs_curvature(self):
        # bowls displaced one pixel along +u from every exact projection:
        # each raw cost is curvature * 1^2
        rig, frame = make_two_camera_frame()
        curvature = 1.7
        store = bowl_store(frame, curvature=curvature, center_shift=(1.0, 0.0))
        weights = Weights(lambda0=0.0, lambda1=0.0, lambda2=0.0,
                          lambda3=0.01, lambda4=0.0, lambda5=0.0)
        out = evaluate_objective(rig, weights, store=store)
        loss = RobustLoss("cauchy", 0.25)
        per_obs, _ = rho(loss, curvature * 1.0)
        expected = 0.01 / 4 * (4 * per_obs)
        assert out.total == pytest.approx(expected, rel=1e-9)

    def test_disabled_mode_emits_nothing(self):
        rig, frame = make_two_camera_frame()
        store = bowl_store(frame)
        problem, info = assemble(
            rig, Weights(lambda4=0.0, lambda5=0.0), store=store,
            feature_mode="none",
        )
        kinds = [b.kind for b in problem._residuals]
        assert "featuremetric" not in kinds

    def test_missing_patches_counted_and_diluted(self):
        rig, frame = make_two_camera_frame()
        full = bowl_store(frame, center_shift=(1.0, 0.0))
        partial = PatchStore(kind="cost", channel_count=3)
        for key, patch in full.patches.items():
            if key[1] == 0:  # keep camera 0's patches only
                partial.add(patch)
        blocks_full, miss_full = build_featuremetric_term(frame, full, 0.01)
        blocks_part, miss_part = build_featuremetric_term(frame, partial, 0.01)
        assert (len(blocks_full), miss_full) == (4, 0)
        assert (len(blocks_part), miss_part) == (2, 2)
        # normalizer stays the full observation count
        assert blocks_part[0].weight == blocks_full[0].weight


class TestIntrinsicsVariance:
    def _rig_two_frames(self, fx=(1000.0, 1002.0)):
        pose = identity_pose()
        frames = []
        for i, f in enumerate(fx):
            frames.append(FrameModel(
                frame_id=i,
                per_camera_pose={0: pose},
                per_camera_intrinsics={0: Intrinsics(f, 1000.0, 640.0, 480.0)},
                points=(),
            ))
        cameras = (Camera(camera_id=0, width=1280, height=960,
                          gt_extrinsics=pose),)
        mean_fx = sum(fx) / len(fx)
        rig = Rig(
            cameras=cameras, frames=tuple(frames),
            global_intrinsics={0: Intrinsics(mean_fx, 1000.0, 640.0, 480.0)},
        )
        return rig

    def test_zero_when_all_frames_match_global(self):
        rig = self._rig_two_frames(fx=(1000.0, 1000.0))
        weights = Weights(lambda0=0.0, lambda1=0.0, lambda2=0.0, lambda3=0.0)
        assert evaluate_objective(rig, weights, feature_mode="none").total == 0.0

    def test_weights_normalized_by_cameras_times_frames(self):
        rig = self._rig_two_frames()
        blocks = build_intrinsics_variance(rig, 0.02, 0.03)
        focal = [b for b in blocks if b.kind == "intrinsics_var_focal"]
        pp = [b for b in blocks if b.kind == "intrinsics_var_pp"]
        assert len(focal) == len(pp) == 2  # one camera, two frames
        assert all(b.weight == 0.02 / 2 for b in focal)
        assert all(b.weight == 0.03 / 2 for b in pp)

    def test_single_frame_weight(self):
        rig = self._rig_two_frames()
        single = Rig(cameras=rig.cameras, frames=rig.frames[:1],
                     global_intrinsics=rig.global_intrinsics)
        blocks = build_intrinsics_variance(single, 0.02, 0.0)
        assert len(blocks) == 1
        assert blocks[0].weight == 0.02 / 1

    def test_requires_initialized_global(self):
        rig = self._rig_two_frames()
        bare = Rig(cameras=rig.cameras, frames=rig.frames)
        with pytest.raises(InvalidValue):
            build_intrinsics_variance(bare, 0.02, 0.02)
        weights = Weights(lambda0=0.0, lambda1=0.0, lambda2=0.0, lambda3=0.0)
        with pytest.raises(InvalidValue):
            evaluate_objective(bare, weights, feature_mode="none")

    def test_mean_start_is_stationary_for_symmetric_frames(self):
        # frame values 1000 and 1002; the mean (1001) zeroes the gradient
        # of the symmetric robust consensus, so the solve stays there
        rig = self._rig_two_frames()
        problem = Problem()
        for i, frame in enumerate(rig.frames):
            problem.add_parameter_block(
                intrinsics_key(i, 0), "intrinsics",
                frame.per_camera_intrinsics[0].as_array(), constant=True,
            )
        problem.add_parameter_block(
            global_intrinsics_key(0), "global_intrinsics",
            rig.global_intrinsics[0].as_array(),
        )
        for block in build_intrinsics_variance(rig, 0.02, 0.02):
            problem.add_residual_block(block)
        problem.solve(max_iterations=50)
        assert problem.get_value(global_intrinsics_key(0))[0] == pytest.approx(
            1001.0, abs=1e-6
        )

    def test_symmetry_of_consensus_objective(self):
        # 1-D scan: the consensus value is symmetric about the mean,
        # confirming the stationary point used above
        c = 0.25
        for delta in np.linspace(0.0, 1.0, 11):
            left = cauchy_value(abs(1000.0 - (1001.0 - delta)), c) + \
                cauchy_value(abs(1002.0 - (1001.0 - delta)), c)
            right = cauchy_value(abs(1000.0 - (1001.0 + delta)), c) + \
                cauchy_value(abs(1002.0 - (1001.0 + delta)), c)
            assert left == pytest.approx(right, rel=1e-13)


class TestAssembleEvaluateParity:
    """The assembled problem and the straight-loop evaluator must agree."""

    def test_parity_on_noisy_dome(self):
        for seed in (0, 1, 2):
            gt_rig, input_rig, store = generate_dome(
                seed=seed, n_cameras=4, n_frames=2, n_points=15,
                noise=NoiseSpec(
                    keypoint_sigma_px=0.5, focal_rel=0.01, pp_abs_px=2.0,
                    rot_rad=0.005, trans=0.01,
                ),
            )
            input_rig = initialize_global_intrinsics(input_rig)
            weights = Weights()
            problem, info = assemble(input_rig, weights, store=store)
            direct = evaluate_objective(input_rig, weights, store=store)
            assert problem.cost() == pytest.approx(direct.total, rel=1e-12)

    def test_parity_without_features(self):
        gt_rig, input_rig, _ = generate_dome(
            seed=4, n_cameras=3, n_frames=3, n_points=12,
            noise=NoiseSpec(keypoint_sigma_px=1.0),
        )
        input_rig = initialize_global_intrinsics(input_rig)
        weights = Weights(lambda3=0.0)
        problem, _ = assemble(input_rig, weights, feature_mode="none")
        direct = evaluate_objective(input_rig, weights, feature_mode="none")
        assert problem.cost() == pytest.approx(direct.total, rel=1e-12)

    def test_parity_with_literal_rotation_variant(self):
        gt_rig, input_rig, store = generate_dome(
            seed=9, n_cameras=3, n_frames=2, n_points=12,
            noise=NoiseSpec(rot_rad=0.01, trans=0.02),
        )
        input_rig = initialize_global_intrinsics(input_rig)
        weights = Weights()
        problem, _ = assemble(
            input_rig, weights, store=store, rotation_residual="literal"
        )
        direct = evaluate_objective(
            input_rig, weights, store=store, rotation_residual="literal"
        )
        assert problem.cost() == pytest.approx(direct.total, rel=1e-12)

    def test_parity_with_observation_behind_camera(self):
        rig, frame = make_two_camera_frame()
        behind = TrackedPoint(
            point_id=99,
            position=np.array([0.0, 0.0, -3.0]),  # behind both cameras
            track=(
                Observation(camera_id=0, keypoint=np.array([640.0, 480.0])),
                Observation(camera_id=1, keypoint=np.array([620.0, 500.0])),
            ),
        )
        shifted = FrameModel(
            frame_id=0,
            per_camera_pose=frame.per_camera_pose,
            per_camera_intrinsics=frame.per_camera_intrinsics,
            points=frame.points + (behind,),
        )
        rig2 = Rig(cameras=rig.cameras, frames=(shifted,),
                   global_intrinsics=rig.global_intrinsics)
        weights = Weights(lambda4=0.0, lambda5=0.0)
        problem, _ = assemble(rig2, weights, feature_mode="none")
        direct = evaluate_objective(rig2, weights, feature_mode="none")
        assert direct.skipped_observations == 2
        assert problem.cost() == pytest.approx(direct.total, rel=1e-12)
        # the dropped observations still count in the normalizer
        assert shifted.observation_count() == 6

    def test_assembly_counts(self):
        gt_rig, input_rig, store = generate_dome(
            seed=2, n_cameras=3, n_frames=2, n_points=10
        )
        input_rig = initialize_global_intrinsics(input_rig)
        problem, info = assemble(input_rig, Weights(), store=store)
        t = sum(f.observation_count() for f in input_rig.frames)
        n_c, n_f = 3, 2
        patched = t - info.missing_patches
        expected = t + patched + 2 * n_c * n_f + 2 * n_c * n_f
        assert info.residual_blocks == expected

    def test_assemble_requires_frames(self):
        rig, _ = make_two_camera_frame()
        empty = Rig(cameras=rig.cameras, frames=())
        with pytest.raises(InvalidValue):
            assemble(empty, Weights())

    def test_constant_poses_freeze_extrinsics(self):
        gt_rig, input_rig, _ = generate_dome(
            seed=6, n_cameras=3, n_frames=1, n_points=10,
            noise=NoiseSpec(keypoint_sigma_px=0.5),
        )
        weights = Weights(lambda3=0.0, lambda4=0.0, lambda5=0.0)
        problem, _ = assemble(
            input_rig, weights, feature_mode="none", constant_poses=True
        )
        frame = input_rig.frames[0]
        before = {
            cid: problem.get_pose(("pose", frame.frame_id, cid))
            for cid in frame.per_camera_pose
        }
        problem.solve(max_iterations=5)
        for cid, (q, t) in before.items():
            q2, t2 = problem.get_pose(("pose", frame.frame_id, cid))
            assert np.array_equal(q, q2)
            assert np.array_equal(t, t2)
