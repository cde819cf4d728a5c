import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from nvsprompt3d import evaluation, splat  # noqa: E402
from nvsprompt3d.scene_io import CameraPose, Intrinsics, PointCloud  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_scene():
    """One deterministic 3-box scene shared by the whole session."""
    return evaluation.make_synthetic_scene(seed=7, n_boxes=3,
                                           points_per_box=400, n_poses=4)


@pytest.fixture(scope="session")
def scene_dir(synthetic_scene, tmp_path_factory):
    """The same scene written out as a manifest directory."""
    root = tmp_path_factory.mktemp("scene")
    manifest = evaluation.write_scene_files(synthetic_scene, root)
    return manifest.parent


@pytest.fixture(scope="session")
def warm_renderer():
    """Trigger kernel compilation once so timed tests measure math, not JIT."""
    cloud = PointCloud(positions=np.array([[0.0, 0.0, 2.0]]),
                       colors=np.array([[1.0, 0.0, 0.0]]))
    scene = splat.init_from_pointcloud(cloud)
    pose = CameraPose(rotation=np.eye(3), translation=np.zeros(3), pose_id=0)
    intr = Intrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0, width=16, height=16)
    splat.render(scene, pose, intr)
    return True


def identity_pose(pose_id: int = 0) -> CameraPose:
    return CameraPose(rotation=np.eye(3), translation=np.zeros(3), pose_id=pose_id)


def simple_intrinsics(width=64, height=48, f=50.0) -> Intrinsics:
    return Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)
