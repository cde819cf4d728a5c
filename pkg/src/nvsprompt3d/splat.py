"""Forward Gaussian splat renderer anchored to a point cloud.

Each point of the cloud carries one isotropic Gaussian whose mean never
moves. Rendering projects every Gaussian to the image plane, dilates its
2-D covariance, assigns it to the screen tiles its footprint can reach,
and alpha-blends front to back per pixel:

    C(p) = sum_i c_i * a_i * T_i,   T_i = prod_{j<i} (1 - a_j)
    a_i  = min(o_i * exp(-0.5 * (p - m_i)^T S_i^{-1} (p - m_i)), 0.99)

with white composited behind whatever transmittance remains. Contributions
with a_i < 1/255 are skipped, and a pixel stops blending once its
transmittance drops below 1e-4.

The footprint radius is chosen so that every pixel where a_i could reach
1/255 is covered (r^2 = 2 * ln(255 * o) * lambda_max of the 2-D
covariance). Together with the skip threshold this makes the output
independent of the tile decomposition: the result is bitwise identical for
any tile size and any worker count, because each tile blends its own pixels
sequentially in the global depth order (ties broken by Gaussian index).
"""

from __future__ import annotations

import os

# Allow worker counts beyond the core count before numba fixes its thread
# cap at import time; the omp layer avoids a TBB version warning.
if "NUMBA_NUM_THREADS" not in os.environ:
    os.environ["NUMBA_NUM_THREADS"] = str(max(os.cpu_count() or 1, 8))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba
import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .errors import BehindCamera, EmptyMask
from .scene_io import CameraPose, InstanceMask, Intrinsics, PointCloud

NEAR_PLANE = 0.01
COV_DILATION = 0.3       # pixels^2 added to both eigenvalues
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_TERMINATE = 1e-4
DEFAULT_TILE = 16
FALLBACK_SCALE = 0.01    # meters, used when the cloud has fewer than 4 points
DEFAULT_OPACITY = 0.9


# ---------------------------------------------------------------------------
# scene types
# ---------------------------------------------------------------------------

class Gaussian:
    """A single anisotropic Gaussian primitive."""

    __slots__ = ("mean", "covariance", "opacity", "color")

    def __init__(self, mean, covariance, opacity, color):
        mean = np.asarray(mean, dtype=np.float64).reshape(3)
        cov = np.asarray(covariance, dtype=np.float64).reshape(3, 3)
        color = np.asarray(color, dtype=np.float64).reshape(3)
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric within 1e-9")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        if not (0.0 < opacity <= 1.0):
            raise ValueError("opacity must lie in (0, 1]")
        if color.min() < 0.0 or color.max() > 1.0:
            raise ValueError("color must lie in [0, 1]")
        self.mean = mean
        self.covariance = cov
        self.opacity = float(opacity)
        self.color = color

    def __repr__(self):
        return (f"Gaussian(mean={self.mean.tolist()}, opacity={self.opacity:.3g}, "
                f"color={self.color.tolist()})")


class GaussianScene:
    """Index-aligned Gaussians for a point cloud, stored as flat arrays.

    Behaves as an immutable sequence of :class:`Gaussian`; the array form
    (means, covariances packed as xx,xy,xz,yy,yz,zz, opacities, colors) is
    what the renderer consumes.
    """

    def __init__(self, means, covariances, opacities, colors):
        means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = means.shape[0]
        cov = np.ascontiguousarray(covariances, dtype=np.float64)
        if cov.shape == (n, 3, 3):
            packed = np.stack(
                [cov[:, 0, 0], cov[:, 0, 1], cov[:, 0, 2],
                 cov[:, 1, 1], cov[:, 1, 2], cov[:, 2, 2]], axis=1)
            if np.abs(cov - np.transpose(cov, (0, 2, 1))).max() > 1e-9:
                raise ValueError("covariances must be symmetric within 1e-9")
        elif cov.shape == (n, 6):
            packed = cov
        else:
            raise ValueError("covariances must be (N, 3, 3) or packed (N, 6)")
        opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3)

        # positive definiteness via Sylvester's criterion (cheap for any N)
        xx, xy, xz, yy, yz, zz = packed.T
        m2 = xx * yy - xy * xy
        det = xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz)
        if not ((xx > 0).all() and (m2 > 0).all() and (det > 0).all()):
            raise ValueError("all covariances must be positive definite")
        if not ((opacities > 0.0).all() and (opacities <= 1.0).all()):
            raise ValueError("opacities must lie in (0, 1]")
        if colors.min() < 0.0 or colors.max() > 1.0:
            raise ValueError("colors must lie in [0, 1]")

        for arr in (means, packed, opacities, colors):
            arr.flags.writeable = False
        self.means = means
        self.cov6 = packed
        self.opacities = opacities
        self.colors = colors

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i) -> Gaussian:
        xx, xy, xz, yy, yz, zz = self.cov6[i]
        cov = np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
        return Gaussian(self.means[i], cov, self.opacities[i], self.colors[i])


class RenderedImage:
    """Blended color, accumulated opacity and expected depth per pixel."""

    __slots__ = ("color", "alpha", "depth")

    def __init__(self, color, alpha, depth):
        if not np.isfinite(color).all():
            raise ValueError("rendered color must be finite")
        if alpha.min() < 0.0 or alpha.max() > 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.color = color
        self.alpha = alpha
        self.depth = depth


def init_from_pointcloud(cloud: PointCloud) -> GaussianScene:
    """Anchor one isotropic Gaussian at every point of the cloud.

    The per-point scale is the mean distance to the 3 nearest neighbors
    (0.01 m when the cloud has fewer than 4 points); colors pass through
    and opacity is 0.9 everywhere.
    """
    n = len(cloud)
    if n < 4:
        scales = np.full(n, FALLBACK_SCALE)
    else:
        tree = cKDTree(cloud.positions)
        dists, _ = tree.query(cloud.positions, k=4)
        scales = dists[:, 1:4].mean(axis=1)
    var = scales ** 2
    cov6 = np.zeros((n, 6))
    cov6[:, 0] = var
    cov6[:, 3] = var
    cov6[:, 5] = var
    return GaussianScene(
        means=cloud.positions,
        covariances=cov6,
        opacities=np.full(n, DEFAULT_OPACITY),
        colors=cloud.colors,
    )


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _project_kernel(means, cov6, opac, R, t, fx, fy, cx, cy, width, height,
                    uv, z_out, conic, cov2, rect):
    n = means.shape[0]
    ln255 = np.log(255.0)
    for i in prange(n):
        rect[i, 0] = 0
        rect[i, 1] = 0
        rect[i, 2] = 0
        rect[i, 3] = 0
        x = R[0, 0] * means[i, 0] + R[0, 1] * means[i, 1] + R[0, 2] * means[i, 2] + t[0]
        y = R[1, 0] * means[i, 0] + R[1, 1] * means[i, 1] + R[1, 2] * means[i, 2] + t[1]
        z = R[2, 0] * means[i, 0] + R[2, 1] * means[i, 1] + R[2, 2] * means[i, 2] + t[2]
        z_out[i] = z
        if z <= NEAR_PLANE:
            uv[i, 0] = 0.0
            uv[i, 1] = 0.0
            continue
        u = fx * x / z + cx
        v = fy * y / z + cy
        uv[i, 0] = u
        uv[i, 1] = v

        # world covariance rotated into the camera frame: C = R S R^T
        sxx = cov6[i, 0]; sxy = cov6[i, 1]; sxz = cov6[i, 2]
        syy = cov6[i, 3]; syz = cov6[i, 4]; szz = cov6[i, 5]
        b00 = R[0, 0] * sxx + R[0, 1] * sxy + R[0, 2] * sxz
        b01 = R[0, 0] * sxy + R[0, 1] * syy + R[0, 2] * syz
        b02 = R[0, 0] * sxz + R[0, 1] * syz + R[0, 2] * szz
        b10 = R[1, 0] * sxx + R[1, 1] * sxy + R[1, 2] * sxz
        b11 = R[1, 0] * sxy + R[1, 1] * syy + R[1, 2] * syz
        b12 = R[1, 0] * sxz + R[1, 1] * syz + R[1, 2] * szz
        b20 = R[2, 0] * sxx + R[2, 1] * sxy + R[2, 2] * sxz
        b21 = R[2, 0] * sxy + R[2, 1] * syy + R[2, 2] * syz
        b22 = R[2, 0] * sxz + R[2, 1] * syz + R[2, 2] * szz
        c00 = b00 * R[0, 0] + b01 * R[0, 1] + b02 * R[0, 2]
        c01 = b00 * R[1, 0] + b01 * R[1, 1] + b02 * R[1, 2]
        c02 = b00 * R[2, 0] + b01 * R[2, 1] + b02 * R[2, 2]
        c11 = b10 * R[1, 0] + b11 * R[1, 1] + b12 * R[1, 2]
        c12 = b10 * R[2, 0] + b11 * R[2, 1] + b12 * R[2, 2]
        c22 = b20 * R[2, 0] + b21 * R[2, 1] + b22 * R[2, 2]

        # perspective Jacobian rows (fx/z, 0, -fx x/z^2), (0, fy/z, -fy y/z^2)
        ja = fx / z
        jb = -fx * x / (z * z)
        jc = fy / z
        jd = -fy * y / (z * z)
        s00 = ja * ja * c00 + 2.0 * ja * jb * c02 + jb * jb * c22 + COV_DILATION
        s01 = ja * jc * c01 + ja * jd * c02 + jb * jc * c12 + jb * jd * c22
        s11 = jc * jc * c11 + 2.0 * jc * jd * c12 + jd * jd * c22 + COV_DILATION
        cov2[i, 0] = s00
        cov2[i, 1] = s01
        cov2[i, 2] = s11
        det = s00 * s11 - s01 * s01
        conic[i, 0] = s11 / det
        conic[i, 1] = -s01 / det
        conic[i, 2] = s00 / det

        lam_max = 0.5 * (s00 + s11) + np.sqrt(0.25 * (s00 - s11) ** 2 + s01 * s01)
        ln_t = ln255 + np.log(opac[i])
        if ln_t <= 0.0:
            continue  # alpha can never reach 1/255
        radius = np.sqrt(2.0 * ln_t * lam_max)
        x0 = int(np.floor(u - radius))
        x1 = int(np.ceil(u + radius)) + 1
        y0 = int(np.floor(v - radius))
        y1 = int(np.ceil(v + radius)) + 1
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width:
            x1 = width
        if y1 > height:
            y1 = height
        if x1 > x0 and y1 > y0:
            rect[i, 0] = x0
            rect[i, 1] = x1
            rect[i, 2] = y0
            rect[i, 3] = y1


@njit(cache=True)
def _bucket_kernel(zorder, rect, tile, n_tx, n_tiles):
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    n = zorder.shape[0]
    for k in range(n):
        g = zorder[k]
        tx0 = rect[g, 0] // tile
        tx1 = (rect[g, 1] - 1) // tile
        ty0 = rect[g, 2] // tile
        ty1 = (rect[g, 3] - 1) // tile
        for ty in range(ty0, ty1 + 1):
            base = ty * n_tx
            for tx in range(tx0, tx1 + 1):
                counts[base + tx + 1] += 1
    starts = np.cumsum(counts)
    cursor = starts[:n_tiles].copy()
    order = np.empty(starts[n_tiles], dtype=np.int64)
    for k in range(n):
        g = zorder[k]
        tx0 = rect[g, 0] // tile
        tx1 = (rect[g, 1] - 1) // tile
        ty0 = rect[g, 2] // tile
        ty1 = (rect[g, 3] - 1) // tile
        for ty in range(ty0, ty1 + 1):
            base = ty * n_tx
            for tx in range(tx0, tx1 + 1):
                order[cursor[base + tx]] = g
                cursor[base + tx] += 1
    return starts, order


@njit(parallel=True, cache=True)
def _blend_kernel(starts, order, uv, conic, zs, opac, colors, rect,
                  width, height, tile, n_tx, n_tiles,
                  out_color, out_trans, out_dsum, out_wsum):
    for ti in prange(n_tiles):
        tx = ti % n_tx
        ty = ti // n_tx
        x0t = tx * tile
        y0t = ty * tile
        x1t = min(x0t + tile, width)
        y1t = min(y0t + tile, height)
        live = (x1t - x0t) * (y1t - y0t)
        for e in range(starts[ti], starts[ti + 1]):
            if live == 0:
                break  # every pixel in the tile is already opaque
            g = order[e]
            rx0 = max(rect[g, 0], x0t)
            rx1 = min(rect[g, 1], x1t)
            ry0 = max(rect[g, 2], y0t)
            ry1 = min(rect[g, 3], y1t)
            mu = uv[g, 0]
            mv = uv[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            zg = zs[g]
            cr = colors[g, 0]
            cg = colors[g, 1]
            cbl = colors[g, 2]
            for py in range(ry0, ry1):
                dy = py - mv
                for px in range(rx0, rx1):
                    tp = out_trans[py, px]
                    if tp < T_TERMINATE:
                        continue
                    dx = px - mu
                    q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                    if q < 0.0:
                        q = 0.0
                    a = o * np.exp(-0.5 * q)
                    if a > ALPHA_CLAMP:
                        a = ALPHA_CLAMP
                    if a < ALPHA_SKIP:
                        continue
                    w = a * tp
                    out_color[py, px, 0] += w * cr
                    out_color[py, px, 1] += w * cg
                    out_color[py, px, 2] += w * cbl
                    out_dsum[py, px] += w * zg
                    out_wsum[py, px] += w
                    tn = tp * (1.0 - a)
                    out_trans[py, px] = tn
                    if tn < T_TERMINATE:
                        live -= 1


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _project_arrays(means, cov6, opac, pose: CameraPose, intr: Intrinsics):
    n = means.shape[0]
    uv = np.empty((n, 2))
    z = np.empty(n)
    conic = np.zeros((n, 3))
    cov2 = np.zeros((n, 3))
    rect = np.zeros((n, 4), dtype=np.int64)
    _project_kernel(means, cov6, opac,
                    np.ascontiguousarray(pose.rotation),
                    np.ascontiguousarray(pose.translation),
                    float(intr.fx), float(intr.fy), float(intr.cx), float(intr.cy),
                    intr.width, intr.height, uv, z, conic, cov2, rect)
    return uv, z, conic, cov2, rect


def project_gaussian(g: Gaussian, pose: CameraPose, intr: Intrinsics):
    """Project one Gaussian: returns (2-D mean, 2-D covariance, depth).

    The 2-D covariance is J C J^T + 0.3 I in pixel units, where C is the
    world covariance rotated into the camera frame and J the perspective
    Jacobian at the view-space mean. Raises BehindCamera when the mean is
    closer than the near plane.
    """
    cov = g.covariance
    cov6 = np.array([[cov[0, 0], cov[0, 1], cov[0, 2],
                      cov[1, 1], cov[1, 2], cov[2, 2]]])
    uv, z, _, cov2, _ = _project_arrays(
        g.mean[None, :], cov6, np.array([g.opacity]), pose, intr)
    if z[0] <= NEAR_PLANE:
        raise BehindCamera(f"gaussian mean at camera depth {z[0]:.4g} m")
    sigma2 = np.array([[cov2[0, 0], cov2[0, 1]],
                       [cov2[0, 1], cov2[0, 2]]])
    return uv[0].copy(), sigma2, float(z[0])


def render(
    scene: GaussianScene,
    pose: CameraPose,
    intr: Intrinsics,
    subset: InstanceMask | None = None,
    tile_size: int = DEFAULT_TILE,
    workers: int | None = None,
) -> RenderedImage:
    """Render the scene (or only the subset's Gaussians) from a pose.

    Output is deterministic: independent of Gaussian input order, of
    tile_size and of the worker count. If no Gaussian lies in front of the
    camera the plain white background is returned.
    """
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    w, h = intr.width, intr.height

    means, cov6, opac, colors = scene.means, scene.cov6, scene.opacities, scene.colors
    if subset is not None:
        if len(subset.bits) != len(scene):
            raise EmptyMask(
                f"subset length {len(subset.bits)} does not match scene size {len(scene)}")
        if not subset.bits.any():
            raise EmptyMask(f"instance {subset.instance_id} has an empty mask")
        keep = subset.bits
        means, cov6 = means[keep], cov6[keep]
        opac, colors = opac[keep], colors[keep]

    uv, z, conic, _, rect = _project_arrays(means, cov6, opac, pose, intr)

    valid = (rect[:, 1] > rect[:, 0]) & (rect[:, 3] > rect[:, 2])
    idx = np.nonzero(valid)[0]
    color = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    dsum = np.zeros((h, w))
    wsum = np.zeros((h, w))
    if idx.size:
        # global front-to-back order; stable sort keeps index order on ties
        zorder = idx[np.argsort(z[idx], kind="stable")]
        n_tx = (w + tile_size - 1) // tile_size
        n_ty = (h + tile_size - 1) // tile_size
        starts, order = _bucket_kernel(zorder, rect, tile_size, n_tx, n_tx * n_ty)
        prev_threads = numba.get_num_threads()
        if workers is not None:
            if workers < 1:
                raise ValueError("workers must be >= 1")
            numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
        try:
            _blend_kernel(starts, order, uv, conic, z, opac, colors, rect,
                          w, h, tile_size, n_tx, n_tx * n_ty,
                          color, trans, dsum, wsum)
        finally:
            if workers is not None:
                numba.set_num_threads(prev_threads)

    color += trans[:, :, None]  # opaque white background
    alpha = 1.0 - trans
    with np.errstate(invalid="ignore"):
        depth = np.where(wsum > 0.0, dsum / np.maximum(wsum, 1e-300), 0.0)
    return RenderedImage(color=color, alpha=alpha, depth=depth)
