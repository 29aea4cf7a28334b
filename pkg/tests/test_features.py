"""Patch interpolation, cost maps, and the binary container format."""
from __future__ import annotations

import numpy as np
import pytest

from domecal.errors import (
    DimensionMismatch,
    DuplicateKey,
    MalformedHeader,
    OutOfPatch,
    TruncatedFile,
)
from domecal.features import (
    COST_CHANNELS,
    CostPatch,
    FeaturePatch,
    PATCH_SIZE,
    PatchStore,
    build_cost_patch,
    cost_lookup,
    interpolate_feature,
    load_patch_store,
    origin_for_keypoint,
    parse_patch_file,
    save_patch_store,
)

def make_patch(data: np.ndarray, origin=(0, 0), key=(0, 0, 0)) -> FeaturePatch:
    return FeaturePatch(
        frame_id=key[0], camera_id=key[1], keypoint_index=key[2],
        origin=origin, data=data,
    )


def field_patch(fn, channels: int, origin=(0, 0)) -> FeaturePatch:
    """Sample an analytic field F(u, v) -> channel vector onto a patch.

    Node (u, v) of the patch sits at image point
    (origin_u + u + 0.5, origin_v + v + 0.5).
    """
    data = np.zeros((PATCH_SIZE, PATCH_SIZE, channels))
    for v in range(PATCH_SIZE):
        for u in range(PATCH_SIZE):
            data[v, u] = fn(origin[0] + u + 0.5, origin[1] + v + 0.5)
    return make_patch(data, origin=origin)


def node_point(patch, u: int, v: int) -> np.ndarray:
    return np.array(
        [patch.origin[0] + u + 0.5, patch.origin[1] + v + 0.5], dtype=np.float64
    )


def interior_nodes():
    """Grid nodes where bicubic interpolation has a full stencil."""
    return [(u, v) for u in range(1, 15) for v in range(1, 15)]


class TestInterpolateFeature:
    def test_node_exact_reproduction(self, rng):
        patch = make_patch(rng.normal(size=(16, 16, 4)), origin=(10, 20))
        for u, v in interior_nodes():
            out = interpolate_feature(patch, node_point(patch, u, v))
            assert np.array_equal(out, patch.data[v, u])

    def test_constant_patch(self, rng):
        value = np.array([3.25, -1.5])
        patch = make_patch(np.tile(value, (16, 16, 1)))
        for _ in range(20):
            p = rng.uniform(1.6, 14.4, size=2)
            assert np.allclose(interpolate_feature(patch, p), value, atol=1e-12)

    def test_bilinear_field_reproduction(self, rng):
        patch = field_patch(
            lambda x, y: np.array([x, y, x * y, 2.0 - 0.5 * x + y]), 4, origin=(5, 7)
        )
        for _ in range(100):
            p = np.array(
                [rng.uniform(7.0, 19.0), rng.uniform(9.0, 21.0)]
            )  # safe interior in image coords
            expected = np.array(
                [p[0], p[1], p[0] * p[1], 2.0 - 0.5 * p[0] + p[1]]
            )
            assert np.allclose(interpolate_feature(patch, p), expected, atol=1e-9)

    def test_quadratic_field_reproduction(self, rng):
        # Catmull-Rom with a = -0.5 reproduces quadratics along each axis.
        patch = field_patch(
            lambda x, y: np.array([x * x - 3 * x + 1, y * y, x * x * y]), 3
        )
        for _ in range(50):
            p = rng.uniform(2.0, 14.0, size=2)
            expected = np.array(
                [p[0] ** 2 - 3 * p[0] + 1, p[1] ** 2, p[0] ** 2 * p[1]]
            )
            assert np.allclose(interpolate_feature(patch, p), expected, atol=1e-9)

    def test_out_of_patch(self):
        patch = make_patch(np.zeros((16, 16, 2)))
        with pytest.raises(OutOfPatch):
            interpolate_feature(patch, np.array([0.2, 8.0]))
        with pytest.raises(OutOfPatch):
            interpolate_feature(patch, np.array([8.0, 15.8]))
        with pytest.raises(OutOfPatch):
            interpolate_feature(patch, np.array([np.nan, 8.0]))

    def test_patch_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            make_patch(np.zeros((8, 16, 2)))


class TestBuildCostPatch:
    def test_patch_equal_to_reference(self):
        ref = np.array([1.0, 2.0, 3.0])
        patch = make_patch(np.tile(ref, (16, 16, 1)))
        cp = build_cost_patch(patch, ref)
        assert isinstance(cp, CostPatch)
        assert np.array_equal(cp.data, np.zeros((16, 16, 3)))

    def test_linear_field_hand_case(self):
        # F(u, v) = reference + (u * s, 0): cost = |u * s| with u in patch
        # coordinates, so d cost/du = s wherever u > 0.
        s = 0.75
        ref = np.array([2.0, -1.0])
        data = np.zeros((16, 16, 2))
        for v in range(16):
            for u in range(16):
                data[v, u] = ref + np.array([u * s, 0.0])
        cp = build_cost_patch(make_patch(data), ref)
        for v in range(16):
            for u in range(16):
                assert cp.data[v, u, 0] == pytest.approx(abs(u * s), abs=1e-12)
        # central differences of |u*s| equal s strictly inside the u > 0 side
        assert np.allclose(cp.data[:, 2:-1, 1], s, atol=1e-12)
        assert np.allclose(cp.data[:, :, 2], 0.0, atol=1e-12)

    def test_channel0_matches_direct_norm_bitwise(self, rng):
        data = rng.normal(size=(16, 16, 8))
        ref = rng.normal(size=8)
        cp = build_cost_patch(make_patch(data), ref)
        for v in range(16):
            for u in range(16):
                d = data[v, u] - ref
                assert cp.data[v, u, 0] == np.sqrt(np.sum(d * d))
                assert cp.data[v, u, 0] == pytest.approx(
                    np.linalg.norm(d), rel=1e-14
                )

    def test_interior_gradients_are_central_differences(self, rng):
        data = rng.normal(size=(16, 16, 3))
        cp = build_cost_patch(make_patch(data), rng.normal(size=3))
        c = cp.data[:, :, 0]
        assert np.allclose(
            cp.data[:, 1:-1, 1], 0.5 * (c[:, 2:] - c[:, :-2]), atol=1e-12
        )
        assert np.allclose(
            cp.data[1:-1, :, 2], 0.5 * (c[2:, :] - c[:-2, :]), atol=1e-12
        )

    def test_cost_channel_nonnegative(self, rng):
        cp = build_cost_patch(
            make_patch(rng.normal(size=(16, 16, 4))), rng.normal(size=4)
        )
        assert np.all(cp.data[:, :, 0] >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            build_cost_patch(make_patch(np.zeros((16, 16, 4))), np.zeros(3))


def bowl_cost_patch(center, curvature=1.0, origin=(0, 0)) -> CostPatch:
    """Quadratic bowl cost patch with analytic derivative channels."""
    u = origin[0] + np.arange(16.0) + 0.5
    v = origin[1] + np.arange(16.0) + 0.5
    du = u[None, :] - center[0]
    dv = v[:, None] - center[1]
    cost = curvature * (du * du + dv * dv)
    gu = 2.0 * curvature * np.broadcast_to(du, (16, 16))
    gv = 2.0 * curvature * np.broadcast_to(dv, (16, 16))
    return CostPatch(
        frame_id=0, camera_id=0, keypoint_index=0, origin=origin,
        data=np.stack([cost, gu, gv], axis=2),
    )


class TestCostLookup:
    def test_zero_patch_at_node(self):
        cp = CostPatch(
            frame_id=0, camera_id=0, keypoint_index=0, origin=(0, 0),
            data=np.zeros((16, 16, 3)),
        )
        cost, grad = cost_lookup(cp, np.array([5.5, 7.5]))
        assert cost == 0.0
        assert np.array_equal(grad, [0.0, 0.0])

    def test_node_values_exact(self, rng):
        data = rng.normal(size=(16, 16, 3))
        data[:, :, 0] = np.abs(data[:, :, 0])
        cp = CostPatch(
            frame_id=0, camera_id=0, keypoint_index=0, origin=(3, 4), data=data
        )
        for u, v in interior_nodes():
            p = node_point(cp, u, v)
            cost, grad = cost_lookup(cp, p)
            assert cost == data[v, u, 0]
            assert np.array_equal(grad, data[v, u, 1:3])

    def test_quadratic_bowl_gradient_points_to_center(self, rng):
        center = np.array([8.3, 7.6])
        cp = bowl_cost_patch(center, curvature=1.0)
        for _ in range(50):
            p = center + rng.uniform(-4, 4, size=2)
            cost, grad = cost_lookup(cp, p)
            expected = 2.0 * (p - center)
            if np.linalg.norm(expected) < 0.2:
                continue
            assert np.linalg.norm(grad - expected) < 0.05 * np.linalg.norm(expected)
        cost_center, _ = cost_lookup(cp, center)
        cost_off, _ = cost_lookup(cp, center + np.array([1.0, 0.0]))
        assert cost_center < cost_off

    def test_out_of_patch(self):
        cp = bowl_cost_patch(np.array([8.0, 8.0]))
        with pytest.raises(OutOfPatch):
            cost_lookup(cp, np.array([0.4, 8.0]))

    def test_cost_consistency_with_interpolated_feature(self, rng):
        # Exact at nodes; within 1e-2 off-node on a smooth field.
        def field(x, y):
            return np.array(
                [np.sin(0.3 * x) + 0.1 * y, np.cos(0.25 * y) - 0.05 * x]
            )

        patch = field_patch(field, 2)
        # reference far from the field's value range keeps the norm smooth
        ref = np.array([4.0, -3.0])
        cp = build_cost_patch(patch, ref)
        for u, v in interior_nodes():
            p = node_point(patch, u, v)
            cost, _ = cost_lookup(cp, p)
            d = patch.data[v, u] - ref
            assert cost == np.sqrt(np.sum(d * d))
        for _ in range(100):
            p = rng.uniform(2.0, 14.0, size=2)
            cost, _ = cost_lookup(cp, p)
            direct = np.linalg.norm(interpolate_feature(patch, p) - ref)
            assert abs(cost - direct) <= 1e-2

    def test_gradient_matches_finite_differences_of_cost(self, rng):
        # The gradient channels are one-pixel central differences of the node
        # costs, and interpolation commutes with integer shifts, so the looked
        # up gradient must equal the one-pixel central difference of the
        # looked-up cost wherever the stencil avoids the one-sided border.
        def field(x, y):
            return np.array([np.sin(0.4 * x) * np.cos(0.3 * y) + 0.02 * x * y])

        patch = field_patch(field, 1)
        cp = build_cost_patch(patch, np.array([5.0]))
        for _ in range(100):
            p = rng.uniform(2.6, 13.4, size=2)
            _, grad = cost_lookup(cp, p)
            fd = np.array(
                [
                    cost_lookup(cp, p + [1.0, 0.0])[0]
                    - cost_lookup(cp, p - [1.0, 0.0])[0],
                    cost_lookup(cp, p + [0.0, 1.0])[0]
                    - cost_lookup(cp, p - [0.0, 1.0])[0],
                ]
            ) / 2.0
            assert np.max(np.abs(grad - fd)) <= 1e-4


class TestOriginForKeypoint:
    def test_centers_keypoint(self):
        assert origin_for_keypoint(np.array([100.0, 50.0]), 1280, 1024) == (92, 42)
        # keypoint at (100.4, 50.6) still rounds to pixel (100, 51)
        assert origin_for_keypoint(np.array([100.4, 50.6]), 1280, 1024) == (92, 43)

    def test_clamps_to_image(self):
        assert origin_for_keypoint(np.array([2.0, 3.0]), 1280, 1024) == (0, 0)
        assert origin_for_keypoint(np.array([1279.0, 1023.0]), 1280, 1024) == (
            1264,
            1008,
        )

    def test_keypoint_contained(self, rng):
        for _ in range(100):
            kp = np.array([rng.uniform(0, 1280), rng.uniform(0, 1024)])
            u, v = origin_for_keypoint(kp, 1280, 1024)
            assert u <= kp[0] < u + 16 or kp[0] >= 1264
            assert v <= kp[1] < v + 16 or kp[1] >= 1008


class TestPatchContainerIo:
    def _store(self, rng, kind="cost"):
        store = PatchStore(
            kind=kind, channel_count=3 if kind == "cost" else 5
        )
        for fid in range(2):
            for cid in range(2):
                for k in range(3):
                    data = rng.normal(size=(16, 16, store.channel_count)).astype(
                        np.float32
                    ).astype(np.float64)
                    if kind == "cost":
                        data[:, :, 0] = np.abs(data[:, :, 0])
                        patch = CostPatch(
                            frame_id=fid, camera_id=cid, keypoint_index=k,
                            origin=(4 * k, 2 * k), data=data,
                        )
                    else:
                        patch = FeaturePatch(
                            frame_id=fid, camera_id=cid, keypoint_index=k,
                            origin=(4 * k, 2 * k), data=data,
                        )
                    store.add(patch)
        return store

    def test_round_trip_bit_exact(self, rng, tmp_path):
        for kind in ("cost", "feature"):
            store = self._store(rng, kind)
            save_patch_store(store, tmp_path / kind)
            loaded = load_patch_store(tmp_path / kind)
            assert loaded.kind == kind
            assert loaded.channel_count == store.channel_count
            assert len(loaded) == len(store)
            for key, patch in store.patches.items():
                other = loaded.patches[key]
                assert other.origin == patch.origin
                assert np.array_equal(other.data, patch.data)

    def test_single_patch_file(self, rng):
        store = PatchStore(kind="feature", channel_count=8)
        store.add(
            FeaturePatch(
                frame_id=0, camera_id=0, keypoint_index=0, origin=(1, 2),
                data=rng.normal(size=(16, 16, 8)).astype(np.float32),
            )
        )
        import tempfile, pathlib
        with tempfile.TemporaryDirectory() as d:
            paths = save_patch_store(store, d)
            assert len(paths) == 1
            patches = parse_patch_file(paths[0].read_bytes(), str(paths[0]))
            assert len(patches) == 1
            assert patches[0].channel_count == 8

    def test_truncated_payload(self, rng, tmp_path):
        store = self._store(rng)
        paths = save_patch_store(store, tmp_path)
        raw = paths[0].read_bytes()
        with pytest.raises(TruncatedFile):
            parse_patch_file(raw[:-7], "t")
        with pytest.raises(TruncatedFile):
            parse_patch_file(raw[:3], "t")

    def test_bad_magic(self):
        with pytest.raises(MalformedHeader):
            parse_patch_file(b"XXXX" + b"\x00" * 64, "t")

    def test_duplicate_key(self):
        store = PatchStore(kind="cost", channel_count=3)
        patch = CostPatch(
            frame_id=0, camera_id=0, keypoint_index=0, origin=(0, 0),
            data=np.zeros((16, 16, 3)),
        )
        store.add(patch)
        with pytest.raises(DuplicateKey):
            store.add(patch)

    def test_fuzz_structured_errors_only(self, rng, tmp_path):
        store = self._store(rng)
        raw = bytearray(save_patch_store(store, tmp_path)[0].read_bytes())
        for _ in range(2000):
            mutated = bytearray(raw)
            for _ in range(rng.integers(1, 8)):
                mutated[rng.integers(0, len(mutated))] = rng.integers(0, 256)
            if rng.random() < 0.3:
                mutated = mutated[: rng.integers(0, len(mutated))]
            try:
                parse_patch_file(bytes(mutated), "fuzz")
            except (MalformedHeader, TruncatedFile, DuplicateKey, DimensionMismatch):
                pass
