"""Shared fixtures and small rig builders for the test suite."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from domecal.model import (
    Camera,
    Extrinsics,
    FrameModel,
    Intrinsics,
    Observation,
    Rig,
    TrackedPoint,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def identity_pose() -> Extrinsics:
    return Extrinsics(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))


def make_two_camera_frame(
    frame_id: int = 0,
    keypoint_shift: float = 0.0,
) -> tuple[Rig, FrameModel]:
    """A minimal 2-camera, 2-point rig with exact observations.

    Camera 0 is at the origin looking down +z; camera 1 is shifted along
    -x (so points appear displaced along +x in its image). Points sit in
    front of both cameras. ``keypoint_shift`` offsets every keypoint in u
    to create a controlled reprojection error.
    """
    k0 = Intrinsics(1000.0, 1000.0, 640.0, 480.0)
    k1 = Intrinsics(900.0, 950.0, 620.0, 500.0)
    pose0 = identity_pose()
    pose1 = Extrinsics(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.2, 0.0, 0.0]))
    points = [
        np.array([0.1, -0.05, 2.0]),
        np.array([-0.2, 0.1, 3.0]),
    ]
    intr = {0: k0, 1: k1}
    poses = {0: pose0, 1: pose1}
    tracked = []
    for pid, x in enumerate(points):
        track = []
        for cid in (0, 1):
            xc = poses[cid].matrix() @ x + poses[cid].translation
            k = intr[cid]
            pix = np.array(
                [
                    k.fx * xc[0] / xc[2] + k.cx + keypoint_shift,
                    k.fy * xc[1] / xc[2] + k.cy,
                ]
            )
            track.append(Observation(camera_id=cid, keypoint=pix, cost_patch_id=pid))
        tracked.append(TrackedPoint(point_id=pid, position=x, track=tuple(track)))
    frame = FrameModel(
        frame_id=frame_id,
        per_camera_pose=poses,
        per_camera_intrinsics=intr,
        points=tuple(tracked),
    )
    cameras = (
        Camera(camera_id=0, width=1280, height=960, name="a.png", gt_extrinsics=pose0),
        Camera(camera_id=1, width=1280, height=960, name="b.png", gt_extrinsics=pose1),
    )
    rig = Rig(cameras=cameras, frames=(frame,))
    return rig, frame
