"""Instance segmentation metrics and the synthetic scene harness.

Average precision follows the standard instance segmentation recipe:
predictions are matched to ground truth greedily in descending confidence
order, per class, each prediction taking the still-unmatched ground truth
with the highest point-set IoU (counted at IoU >= threshold). AP is the
area under the precision-recall curve with the all-point (envelope)
interpolation; the headline AP averages thresholds 0.50:0.05:0.95, with
AP50 and AP25 at fixed thresholds.

The synthetic scenes are desk-scale stand-ins for captured datasets:
axis-aligned colored boxes with surface-sampled points, a camera ring
aimed at the cluster, and depth maps ray-cast analytically from the box
geometry so visibility tests agree with the cloud by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import splat
from .errors import EmptyGroundTruth, SchemaViolation
from .geometry import aim_rotation
from .scene_io import (
    CameraPose,
    DepthMap,
    InstanceMask,
    Intrinsics,
    PointCloud,
    write_depth,
    write_image,
    write_ply,
)


@dataclass(frozen=True)
class Prediction:
    """A predicted instance: point indices, label and confidence."""

    indices: np.ndarray
    label: str
    confidence: float

    def __post_init__(self):
        if not (-1.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [-1, 1]")
        object.__setattr__(self, "indices",
                           np.unique(np.asarray(self.indices, dtype=np.int64)))


@dataclass(frozen=True)
class GroundTruthInstance:
    indices: np.ndarray
    label: str

    def __post_init__(self):
        object.__setattr__(self, "indices",
                           np.unique(np.asarray(self.indices, dtype=np.int64)))


def point_set_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    union = a.size + b.size - inter
    return inter / union if union else 0.0


def _match_greedy(preds, gts, iou_threshold):
    """Confidence-ordered greedy matching; returns per-prediction TP flags."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken = [False] * len(gts)
    tp = np.zeros(len(preds), dtype=bool)
    for rank, i in enumerate(order):
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = point_set_iou(preds[i].indices, gt.indices)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            tp[rank] = True
    return tp


def _ap_from_flags(tp: np.ndarray, n_gt: int) -> float:
    """Area under the PR curve via the all-point precision envelope."""
    if n_gt == 0:
        return 0.0
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, tp.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def average_precision(predictions, ground_truth, iou_threshold: float) -> float:
    """Mean AP over the classes present in the ground truth.

    Predictions whose label matches no ground-truth class are ignored (the
    benchmark convention: a class with no ground truth has no defined PR
    curve).
    """
    if len(ground_truth) == 0:
        raise EmptyGroundTruth("no ground-truth instances")
    classes = sorted({g.label for g in ground_truth})
    per_class = []
    for cls in classes:
        gts = [g for g in ground_truth if g.label == cls]
        preds = [p for p in predictions if p.label == cls]
        tp = _match_greedy(preds, gts, iou_threshold)
        per_class.append(_ap_from_flags(tp, len(gts)))
    return float(np.mean(per_class))


AP_SWEEP_THRESHOLDS = tuple(np.arange(50, 100, 5) / 100.0)


def ap_sweep(predictions, ground_truth) -> dict:
    """AP averaged over IoU 0.50:0.05:0.95 plus the fixed AP50 / AP25."""
    sweep = [average_precision(predictions, ground_truth, t)
             for t in AP_SWEEP_THRESHOLDS]
    return {
        "AP": float(np.mean(sweep)),
        "AP50": average_precision(predictions, ground_truth, 0.50),
        "AP25": average_precision(predictions, ground_truth, 0.25),
    }


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

PALETTE = (
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("magenta", (1.0, 0.0, 1.0)),
    ("cyan", (0.0, 1.0, 1.0)),
    ("orange", (1.0, 0.5, 0.0)),
    ("violet", (0.5, 0.0, 1.0)),
)

MIN_POINTS_PER_BOX = 50


@dataclass(frozen=True)
class SyntheticScene:
    """Boxes with ground truth, ring cameras and analytic depth."""

    cloud: PointCloud
    masks: tuple              # InstanceMask per box
    labels: tuple             # color name per box
    box_bounds: np.ndarray    # (n, 2, 3) min/max corners
    poses: tuple              # CameraPose ring
    intrinsics: Intrinsics
    depths: dict              # pose_id -> DepthMap

    @property
    def ground_truth(self):
        return [GroundTruthInstance(indices=m.indices, label=l)
                for m, l in zip(self.masks, self.labels)]


def _sample_box_surface(rng, bmin, bmax, count):
    """Uniform area-weighted samples on the six faces of an AABB."""
    ext = bmax - bmin
    areas = np.array([ext[1] * ext[2], ext[1] * ext[2],
                      ext[0] * ext[2], ext[0] * ext[2],
                      ext[0] * ext[1], ext[0] * ext[1]])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    pts = bmin + rng.uniform(size=(count, 3)) * ext
    axis = faces // 2
    side = faces % 2
    rows = np.arange(count)
    pts[rows, axis] = np.where(side == 0, bmin[axis], bmax[axis])
    return pts


def _ray_box_depth(centers, dirs, bmin, bmax):
    """Entry distance of rays (origin per row) into one AABB; inf if missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (bmin - centers) / dirs
        t1 = (bmax - centers) / dirs
    tnear = np.nanmax(np.minimum(t0, t1), axis=1)
    tfar = np.nanmin(np.maximum(t0, t1), axis=1)
    hit = (tnear <= tfar) & (tfar > 0.0) & (tnear > 0.0)
    return np.where(hit, tnear, np.inf)


def make_synthetic_scene(
    seed: int,
    n_boxes: int = 3,
    points_per_box: int = 400,
    n_poses: int = 4,
    image_size: tuple = (192, 144),
    ring_radius: float = 3.2,
    ring_height: float = 1.4,
    box_ring_radius: float = 1.2,
) -> SyntheticScene:
    """Deterministic scene of colored boxes on a circle with a camera ring.

    Boxes sit at evenly spaced angles around the origin, are disjoint by
    construction, and every point lies exactly on a box surface so the
    analytic depth maps agree with the cloud.
    """
    if n_boxes < 1:
        raise ValueError("n_boxes must be >= 1")
    if n_boxes > len(PALETTE):
        raise ValueError(f"at most {len(PALETTE)} boxes supported")
    if points_per_box < MIN_POINTS_PER_BOX:
        raise ValueError(f"points_per_box must be >= {MIN_POINTS_PER_BOX}")
    if n_poses < 1:
        raise ValueError("n_poses must be >= 1")

    rng = np.random.default_rng(seed)
    width, height = image_size

    bounds = np.empty((n_boxes, 2, 3))
    positions = []
    colors = []
    masks = []
    labels = []
    cursor = 0
    for i in range(n_boxes):
        angle = 2.0 * np.pi * i / max(n_boxes, 1)
        center = np.array([box_ring_radius * np.cos(angle),
                           box_ring_radius * np.sin(angle), 0.0])
        half = rng.uniform(0.35, 0.5, size=3)
        bounds[i, 0] = center - half
        bounds[i, 1] = center + half
        pts = _sample_box_surface(rng, bounds[i, 0], bounds[i, 1], points_per_box)
        positions.append(pts)
        name, rgb = PALETTE[i]
        labels.append(name)
        colors.append(np.tile(rgb, (points_per_box, 1)))
        masks.append((cursor, cursor + points_per_box))
        cursor += points_per_box

    cloud = PointCloud(positions=np.concatenate(positions),
                       colors=np.concatenate(colors))
    n_points = len(cloud)
    instance_masks = []
    for i, (lo, hi) in enumerate(masks):
        bits = np.zeros(n_points, dtype=bool)
        bits[lo:hi] = True
        instance_masks.append(InstanceMask(instance_id=i, bits=bits))

    intr = Intrinsics(fx=0.9 * width, fy=0.9 * width,
                      cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)
    target = np.zeros(3)
    up = np.array([0.0, 0.0, 1.0])

    poses = []
    depths = {}
    for pid in range(n_poses):
        angle = 2.0 * np.pi * pid / n_poses
        center = np.array([ring_radius * np.cos(angle),
                           ring_radius * np.sin(angle), ring_height])
        rot = aim_rotation(center, target, up)
        pose = CameraPose(rotation=rot, translation=-rot @ center, pose_id=pid)
        poses.append(pose)

        iu, iv = np.meshgrid(np.arange(width), np.arange(height))
        dirs_cam = np.stack([(iu.ravel() - intr.cx) / intr.fx,
                             (iv.ravel() - intr.cy) / intr.fy,
                             np.ones(width * height)], axis=1)
        dirs_world = dirs_cam @ rot  # rows times R == R^T @ dir
        depth = np.full(width * height, np.inf)
        for i in range(n_boxes):
            depth = np.minimum(depth, _ray_box_depth(
                center[None, :], dirs_world, bounds[i, 0], bounds[i, 1]))
        depth = np.where(np.isfinite(depth), depth, 0.0).reshape(height, width)
        depths[pid] = DepthMap(values=depth.astype(np.float32), pose_id=pid)

    return SyntheticScene(
        cloud=cloud,
        masks=tuple(instance_masks),
        labels=tuple(labels),
        box_bounds=bounds,
        poses=tuple(poses),
        intrinsics=intr,
        depths=depths,
    )


def write_scene_files(
    scene: SyntheticScene,
    root,
    delta: float = 0.4,
    top_k: int = 2,
    n_interp: int = 1,
    alpha: float = 0.5,
    prompt_mode: str = "seggauss",
    fusion_mode: str = "wfb",
) -> Path:
    """Materialize a synthetic scene as a loadable manifest directory.

    Dataset images are splat renders of the anchored Gaussians; queries are
    constant-color reference patches named after the box colors. Returns
    the manifest path. Ground truth lands in gt.json next to it.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    (root / "queries").mkdir(exist_ok=True)

    write_ply(scene.cloud, root / "cloud.ply")
    masks_json = [{"instance_id": m.instance_id, "indices": m.indices.tolist()}
                  for m in scene.masks]
    (root / "masks.json").write_text(json.dumps(masks_json))
    poses_json = [{"pose_id": p.pose_id,
                   "camera_to_world": [float(x) for x in p.camera_to_world().ravel()]}
                  for p in scene.poses]
    (root / "poses.json").write_text(json.dumps(poses_json, indent=1))
    intr = scene.intrinsics
    (root / "intrinsics.json").write_text(json.dumps(
        {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
         "width": intr.width, "height": intr.height}))

    gaussians = splat.init_from_pointcloud(scene.cloud)
    for pose in scene.poses:
        write_depth(scene.depths[pose.pose_id], root / "depth" / f"{pose.pose_id}.dmap")
        rendered = splat.render(gaussians, pose, intr)
        write_image(rendered.color, root / "images" / f"{pose.pose_id}.png")

    palette = dict(PALETTE)
    patch_paths = []
    for label in scene.labels:
        patch = np.ones((16, 16, 3)) * np.asarray(palette[label])
        path = root / "queries" / f"{label}.png"
        write_image(patch, path)
        patch_paths.append(f"queries/{label}.png")
    (root / "queries.json").write_text(json.dumps(
        {"labels": list(scene.labels), "images": patch_paths}))

    gt_json = [{"label": g.label, "indices": g.indices.tolist()}
               for g in scene.ground_truth]
    (root / "gt.json").write_text(json.dumps(gt_json))

    manifest = {
        "point_cloud": "cloud.ply",
        "masks": "masks.json",
        "poses": "poses.json",
        "intrinsics": "intrinsics.json",
        "depth_dir": "depth",
        "image_dir": "images",
        "delta": delta,
        "top_k": top_k,
        "n_interp": n_interp,
        "alpha": alpha,
        "prompt_mode": prompt_mode,
        "fusion_mode": fusion_mode,
        "queries": "queries.json",
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def load_ground_truth(path) -> list:
    """Read a gt.json file: array of {label, indices}."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation("ground_truth", f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise SchemaViolation("ground_truth", "must be a non-empty array")
    out = []
    for i, entry in enumerate(raw):
        if "label" not in entry or "indices" not in entry:
            raise SchemaViolation(f"ground_truth[{i}]", "needs label and indices")
        out.append(GroundTruthInstance(
            indices=np.asarray(entry["indices"], dtype=np.int64),
            label=str(entry["label"])))
    return out
