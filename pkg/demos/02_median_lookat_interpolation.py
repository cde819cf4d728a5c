"""
Robust centers, look-at aiming and pose interpolation
=====================================================

The center an object is aimed at matters: the arithmetic mean chases
outliers, the geometric median does not. Once a center is chosen, any
camera can be re-aimed at it with a look-at rotation, and new in-between
cameras can be synthesized by sliding the camera center along the segment
between two reference poses while keeping the object centered.
"""

import numpy as np

from nvsprompt3d import geometry
from nvsprompt3d.scene_io import CameraPose, Intrinsics

# ---- geometric median vs mean under contamination -----------------------

rng = np.random.default_rng(0)
cluster = rng.normal(scale=0.05, size=(80, 3))
outliers = rng.normal(scale=0.1, size=(8, 3)) + [4.0, 0.0, 0.0]
points = np.concatenate([cluster, outliers])

mean = points.mean(axis=0)
median = geometry.geometric_median(points)
print(f"mean    drifts to {np.round(mean, 3)}")
print(f"median  stays at  {np.round(median, 3)}")

# the objective never increases along the iteration
objectives = []
geometry.geometric_median(
    points, callback=lambda c: objectives.append(geometry.distance_sum(points, c)))
print(f"objective: {objectives[0]:.3f} -> {objectives[-1]:.3f} "
      f"over {len(objectives)} iterates (monotone: "
      f"{all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))})")

# ---- look-at: aim a camera at the cluster -------------------------------

intr = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
camera = CameraPose(rotation=np.eye(3),
                    translation=np.array([-2.0, 0.4, -3.0]), pose_id=0)
aimed = geometry.look_at(camera, median)
u, v, z = geometry.project_to_pixels(median[None, :], aimed, intr)
print(f"\nafter look_at the center projects to ({u[0]:.2f}, {v[0]:.2f}), "
      f"principal point is ({intr.cx}, {intr.cy})")

# ---- interpolate poses between two references ---------------------------

other = CameraPose(rotation=np.eye(3),
                   translation=np.array([2.0, -0.6, -3.0]), pose_id=1)
aimed_other = geometry.look_at(other, median)
for n_interp in (1, 3):
    poses = geometry.interpolate_poses(aimed, aimed_other, median, n_interp)
    ts = geometry.InterpolationParams(n_interp).factors
    centers = ", ".join(str(np.round(p.center, 2)) for p in poses)
    print(f"n_interp={n_interp}: t={np.round(ts, 3).tolist()} centers {centers}")
    for pose in poses:
        u, v, z = geometry.project_to_pixels(median[None, :], pose, intr)
        assert abs(u[0] - intr.cx) < 0.5 and abs(v[0] - intr.cy) < 0.5
print("every interpolated pose keeps the object centered")
