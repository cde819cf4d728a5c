"""Camera geometry: projection, occlusion-aware visibility, robust centers,
look-at rotations and pose interpolation.

Conventions
-----------
World-to-camera transform: x_cam = R @ x_world + t, with the camera looking
along +z (points in front have z_cam > 0). Pixel coordinates come from the
pinhole model u = fx * x/z + cx, v = fy * y/z + cy; depth lookups use the
nearest pixel via round-half-up. The camera-to-world rotation has columns
[right, up, forward].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CoincidentTarget,
    DegenerateUp,
    DimensionMismatch,
    EmptyInput,
    EmptyMask,
    NoVisiblePose,
)
from .scene_io import CameraPose, DepthMap, InstanceMask, Intrinsics, PointCloud


@dataclass(frozen=True)
class ProjectedPoint:
    """One world point projected into a view."""

    u: float
    v: float
    z: float
    visible: bool


@dataclass(frozen=True)
class VisibilityScore:
    """Number of an instance's points visible from one pose."""

    pose_id: int
    score: int


@dataclass(frozen=True)
class InterpolationParams:
    """Interpolation schedule t_n = n / (n_interp + 1), n = 1..n_interp."""

    n_interp: int

    def __post_init__(self):
        if self.n_interp < 0:
            raise ValueError("n_interp must be >= 0")

    @property
    def factors(self) -> np.ndarray:
        n = self.n_interp
        return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Nearest integer with .5 rounding away from minus infinity."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def project_to_pixels(points: np.ndarray, pose: CameraPose, intr: Intrinsics):
    """Vectorized pinhole projection. Returns (u, v, z) float arrays.

    z <= 0 marks points at or behind the camera plane; u, v are still
    reported for such points but are not meaningful.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return u, v, z


def visibility_flags(
    points: np.ndarray,
    pose: CameraPose,
    intr: Intrinsics,
    depth: Optional[DepthMap],
    delta: Optional[float],
):
    """Per-point visibility under the four-condition test.

    A point is visible when it projects in bounds, lies in front of the
    camera, and (if a depth map is given) the depth map holds a valid value
    at the rounded pixel that agrees with the point's depth within delta.
    Passing depth=None skips the occlusion test entirely.
    """
    u, v, z = project_to_pixels(points, pose, intr)
    in_front = z > 0.0
    in_bounds = (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
    visible = in_front & in_bounds
    if depth is not None:
        if delta is None or not delta > 0:
            raise ValueError("delta must be > 0 when a depth map is given")
        iu = round_half_up(u)
        iv = round_half_up(v)
        lookup_ok = (iu >= 0) & (iu < intr.width) & (iv >= 0) & (iv < intr.height)
        d = np.zeros_like(z)
        safe_u = np.clip(iu, 0, intr.width - 1)
        safe_v = np.clip(iv, 0, intr.height - 1)
        d[lookup_ok] = depth.values[safe_v[lookup_ok], safe_u[lookup_ok]]
        visible &= lookup_ok & (d > 0.0) & (np.abs(z - d) <= delta)
    return u, v, z, visible


def project_points(
    points: np.ndarray,
    pose: CameraPose,
    intr: Intrinsics,
    depth: Optional[DepthMap] = None,
    delta: Optional[float] = None,
) -> list[ProjectedPoint]:
    """Project world points into a view, flagging the visible ones."""
    u, v, z, visible = visibility_flags(points, pose, intr, depth, delta)
    return [
        ProjectedPoint(u=float(u[i]), v=float(v[i]), z=float(z[i]),
                       visible=bool(visible[i]))
        for i in range(u.shape[0])
    ]


def visibility_score(
    mask: InstanceMask,
    cloud: PointCloud,
    pose: CameraPose,
    intr: Intrinsics,
    depth: DepthMap,
    delta: float,
) -> VisibilityScore:
    """Count how many of the instance's points are visible from a pose."""
    if len(mask.bits) != len(cloud):
        raise DimensionMismatch(
            "mask", f"length {len(mask.bits)} does not match cloud size {len(cloud)}")
    if not mask.bits.any():
        raise EmptyMask(f"instance {mask.instance_id} has an empty mask")
    pts = cloud.positions[mask.bits]
    _, _, _, visible = visibility_flags(pts, pose, intr, depth, delta)
    return VisibilityScore(pose_id=pose.pose_id, score=int(visible.sum()))


def select_top_k(scores: Sequence[VisibilityScore], k: int) -> list[int]:
    """Pose ids of the k best-scoring poses, best first.

    Ties break toward the smaller pose_id. Poses with zero score are never
    selected; if fewer than k poses score above zero only those are
    returned, and all-zero scores raise NoVisiblePose.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    positive = [s for s in scores if s.score > 0]
    if not positive:
        raise NoVisiblePose("all candidate poses have visibility score 0")
    ranked = sorted(positive, key=lambda s: (-s.score, s.pose_id))
    return [s.pose_id for s in ranked[:k]]


# ---------------------------------------------------------------------------
# geometric median (Weiszfeld iteration)
# ---------------------------------------------------------------------------

_WEISZFELD_EPS_RATIO = 1e-5
_WEISZFELD_MAX_ITER = 1000
_WEISZFELD_MIN_DIST = 1e-10


def geometric_median(
    points: np.ndarray,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Point minimizing the sum of Euclidean distances to ``points``.

    Weiszfeld iteration started at the centroid. The data scale sigma is
    the mean of the per-axis standard deviations; iteration stops after
    1000 steps or when a step moves less than sigma * 1e-5. Points closer
    than 1e-10 to the current estimate are excluded from the weight sum to
    avoid division by zero; if every point is excluded the current estimate
    is already the answer.

    ``callback`` receives each accepted estimate (including the initial
    centroid), which tests use to watch the objective decrease.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyInput("geometric median of zero points")
    sigma = float(np.mean(np.std(pts, axis=0)))
    eps = sigma * _WEISZFELD_EPS_RATIO
    c = pts.mean(axis=0)
    if callback is not None:
        callback(c.copy())
    for _ in range(_WEISZFELD_MAX_ITER):
        d = np.linalg.norm(pts - c, axis=1)
        valid = d > _WEISZFELD_MIN_DIST
        if not valid.any():
            break
        w = 1.0 / d[valid]
        c_new = (w[:, None] * pts[valid]).sum(axis=0) / w.sum()
        if np.linalg.norm(c_new - c) < eps:
            break
        c = c_new
        if callback is not None:
            callback(c.copy())
    return c


def distance_sum(points: np.ndarray, x: np.ndarray) -> float:
    """Objective of the geometric median: sum of distances from x to points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return float(np.linalg.norm(pts - np.asarray(x, dtype=np.float64), axis=1).sum())


# ---------------------------------------------------------------------------
# look-at and pose interpolation
# ---------------------------------------------------------------------------

_UP_DEGENERACY_TOL = 1e-8
_TARGET_TOL = 1e-12


def aim_rotation(center: np.ndarray, target: np.ndarray, up: np.ndarray) -> np.ndarray:
    """World-to-camera rotation that points the camera at ``target``.

    Builds the orthonormal basis f = normalize(target - center),
    r = normalize(up x f), u = f x r and returns the rotation whose
    camera-to-world columns are [r, u, f]. That places the target on the
    optical axis with positive depth.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    offset = target - center
    dist = np.linalg.norm(offset)
    if dist < _TARGET_TOL:
        raise CoincidentTarget("look-at target coincides with the camera center")
    f = offset / dist
    up_norm = np.linalg.norm(up)
    if up_norm == 0.0:
        raise DegenerateUp("up vector has zero length")
    up = up / up_norm
    r = np.cross(up, f)
    r_norm = np.linalg.norm(r)
    if r_norm < _UP_DEGENERACY_TOL:
        raise DegenerateUp("up vector is parallel to the viewing direction")
    r = r / r_norm
    u = np.cross(f, r)
    # camera-to-world columns [r, u, f]; world-to-camera is the transpose
    return np.stack([r, u, f], axis=0)


def look_at(pose: CameraPose, target: np.ndarray,
            up: Optional[np.ndarray] = None) -> CameraPose:
    """Re-aim a camera at a world target, preserving its center.

    The up reference defaults to the pose's own up direction (second column
    of its camera-to-world rotation). The returned pose projects the target
    onto the principal point.
    """
    center = pose.center
    if up is None:
        up = pose.up
    rot = aim_rotation(center, target, up)
    return CameraPose(rotation=rot, translation=-rot @ center, pose_id=pose.pose_id)


def interpolate_poses(
    pose_a: CameraPose,
    pose_b: CameraPose,
    target: np.ndarray,
    n_interp: int,
) -> list[CameraPose]:
    """Object-centered poses between two cameras.

    Camera centers move linearly between the two input centers at
    t_n = n / (n_interp + 1); each rotation is rebuilt with look-at toward
    ``target`` using pose_a's up vector as the roll reference for every
    step, and the result is returned as full rigid poses.
    """
    if n_interp < 1:
        raise ValueError("n_interp must be >= 1")
    ca = pose_a.center
    cb = pose_b.center
    up_a = pose_a.up
    out = []
    for n, t in enumerate(InterpolationParams(n_interp).factors, start=1):
        center = (1.0 - t) * ca + t * cb
        try:
            rot = aim_rotation(center, target, up_a)
        except (DegenerateUp, CoincidentTarget) as exc:
            raise type(exc)(f"interpolation step {n} (t={t:g}): {exc}") from exc
        out.append(CameraPose(rotation=rot, translation=-rot @ center, pose_id=-1))
    return out
