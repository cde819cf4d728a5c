"""Hard visual prompts: crops, blur-reverse masks and segmented renders.

A prompt is an image modification that steers an embedding model's
attention to one object without touching the model itself. Three modes are
supported, over both dataset photographs and splat-rendered interpolated
views:

crop
    Bounding box of the visibly projected mask, padded and clamped.
blur
    Everything outside the (morphologically closed) projected mask is
    box-blurred, then the result is cut to a square whose side is the
    object's larger dimension divided by 0.7, so the object fills about
    70 percent of the prompt.
seggauss
    Only the instance's own Gaussians are rendered, on white, then cropped
    like a crop prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import splat
from .errors import DegenerateCrop, NoVisiblePixels
from .geometry import visibility_flags
from .scene_io import CameraPose, DepthMap, InstanceMask, Intrinsics, PointCloud

MIN_PROMPT_SIZE = 8
DEFAULT_PAD = 10
CLOSING_SIZE = 5
BLUR_SIZE = 15
SQUARE_FILL = 0.7

ORIGIN_DATASET = "dataset_view"
ORIGIN_INTERPOLATED = "interpolated_view"


@dataclass(frozen=True)
class MaskProjection:
    """Visible projected mask pixels and their bounding box (inclusive)."""

    pixels: np.ndarray  # (M, 2) int64 unique (u, v) pairs
    u_min: int
    v_min: int
    u_max: int
    v_max: int

    @property
    def bbox(self):
        return (self.u_min, self.v_min, self.u_max, self.v_max)

    @property
    def bbox_width(self) -> int:
        return self.u_max - self.u_min + 1

    @property
    def bbox_height(self) -> int:
        return self.v_max - self.v_min + 1


@dataclass(frozen=True)
class PromptImage:
    """One prompt: pixels in [0, 1] plus provenance tags."""

    pixels: np.ndarray
    instance_id: int
    pose_id: int
    origin: str
    mode: str

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if h < MIN_PROMPT_SIZE or w < MIN_PROMPT_SIZE:
            raise DegenerateCrop(f"prompt is {w}x{h}, minimum is "
                                 f"{MIN_PROMPT_SIZE}x{MIN_PROMPT_SIZE}")
        if not np.isfinite(self.pixels).all():
            raise ValueError("prompt pixels must be finite")


def _project_positions(positions, instance_id, pose, intr, depth, delta):
    u, v, _, visible = visibility_flags(positions, pose, intr, depth, delta)
    iu = np.floor(u[visible] + 0.5).astype(np.int64)
    iv = np.floor(v[visible] + 0.5).astype(np.int64)
    # a point just inside the float bounds can still round onto the border
    inside = (iu >= 0) & (iu < intr.width) & (iv >= 0) & (iv < intr.height)
    iu, iv = iu[inside], iv[inside]
    if iu.size == 0:
        raise NoVisiblePixels(
            f"instance {instance_id}: no visible point in pose {pose.pose_id}")
    pix = np.unique(np.stack([iu, iv], axis=1), axis=0)
    return MaskProjection(
        pixels=pix,
        u_min=int(pix[:, 0].min()), v_min=int(pix[:, 1].min()),
        u_max=int(pix[:, 0].max()), v_max=int(pix[:, 1].max()),
    )


def project_mask(
    mask: InstanceMask,
    cloud: PointCloud,
    pose: CameraPose,
    intr: Intrinsics,
    depth: DepthMap | None = None,
    delta: float | None = None,
) -> MaskProjection:
    """Rounded pixels of the instance's visible points, with bounding box.

    With a depth map the occlusion test applies; without one any point in
    front of the camera and inside the frame counts (used for views that
    have no captured depth, e.g. segmented renders).
    """
    if not mask.bits.any():
        raise NoVisiblePixels(f"instance {mask.instance_id} has an empty mask")
    return _project_positions(cloud.positions[mask.bits], mask.instance_id,
                              pose, intr, depth, delta)


def _clamped_window(lo: int, hi: int, pad: int, size: int):
    """Inclusive [lo, hi] padded by pad and clamped to [0, size)."""
    return max(lo - pad, 0), min(hi + pad, size - 1)


def crop(
    image: np.ndarray,
    proj: MaskProjection,
    pad: int = DEFAULT_PAD,
    instance_id: int = -1,
    pose_id: int = -1,
    origin: str = ORIGIN_DATASET,
) -> PromptImage:
    """Cut the padded bounding box of the projected mask out of an image."""
    h, w = image.shape[:2]
    u0, u1 = _clamped_window(proj.u_min, proj.u_max, pad, w)
    v0, v1 = _clamped_window(proj.v_min, proj.v_max, pad, h)
    if u1 - u0 + 1 < MIN_PROMPT_SIZE or v1 - v0 + 1 < MIN_PROMPT_SIZE:
        raise DegenerateCrop(
            f"crop ({u0},{v0})..({u1},{v1}) is below "
            f"{MIN_PROMPT_SIZE}x{MIN_PROMPT_SIZE}")
    return PromptImage(
        pixels=image[v0:v1 + 1, u0:u1 + 1].copy(),
        instance_id=instance_id, pose_id=pose_id, origin=origin, mode="crop",
    )


def blur_reverse_mask(
    image: np.ndarray,
    proj: MaskProjection,
    instance_id: int = -1,
    pose_id: int = -1,
    origin: str = ORIGIN_DATASET,
) -> PromptImage:
    """Keep the object sharp, blur everything else, cut a centered square.

    The projected pixels are closed with a 5x5 square element (dilate then
    erode); pixels inside the closed mask are copied from the source
    unchanged, the rest comes from a 15x15 box blur. The output square has
    side ceil(max(bbox_w, bbox_h) / 0.7), centered on the bbox and clamped
    to the image.
    """
    h, w = image.shape[:2]
    binary = np.zeros((h, w), dtype=bool)
    inside = ((proj.pixels[:, 0] >= 0) & (proj.pixels[:, 0] < w)
              & (proj.pixels[:, 1] >= 0) & (proj.pixels[:, 1] < h))
    pix = proj.pixels[inside]
    if pix.size == 0:
        raise NoVisiblePixels("projected mask lies outside the image")
    binary[pix[:, 1], pix[:, 0]] = True

    element = np.ones((CLOSING_SIZE, CLOSING_SIZE), dtype=bool)
    dilated = ndimage.binary_dilation(binary, structure=element, border_value=0)
    # erosion treats the outside as set so a full-frame mask survives closing
    closed = ndimage.binary_erosion(dilated, structure=element, border_value=1)

    blurred = np.empty_like(image)
    for ch in range(image.shape[2]):
        blurred[:, :, ch] = ndimage.uniform_filter(
            image[:, :, ch], size=BLUR_SIZE, mode="reflect")
    composite = np.where(closed[:, :, None], image, blurred)

    side = max(int(np.ceil(max(proj.bbox_width, proj.bbox_height) / SQUARE_FILL)),
               MIN_PROMPT_SIZE)
    # integer-centered square around the bbox midpoint, then clamped
    u0 = (proj.u_min + proj.u_max + 1 - side) // 2
    v0 = (proj.v_min + proj.v_max + 1 - side) // 2
    u1 = u0 + side - 1
    v1 = v0 + side - 1
    u0, u1 = max(u0, 0), min(u1, w - 1)
    v0, v1 = max(v0, 0), min(v1, h - 1)
    return PromptImage(
        pixels=composite[v0:v1 + 1, u0:u1 + 1].copy(),
        instance_id=instance_id, pose_id=pose_id, origin=origin, mode="blur",
    )


def segmented_gaussian_prompt(
    scene: splat.GaussianScene,
    mask: InstanceMask,
    pose: CameraPose,
    intr: Intrinsics,
    pad: int = DEFAULT_PAD,
    origin: str = ORIGIN_DATASET,
    workers: int | None = None,
) -> PromptImage:
    """Render only the instance's Gaussians on white and crop to the object.

    The Gaussian means are anchored to the point cloud, so the crop box
    comes from projecting the masked means (no occlusion test: nothing else
    is rendered).
    """
    if len(mask.bits) != len(scene):
        raise NoVisiblePixels(
            f"mask length {len(mask.bits)} does not match scene size {len(scene)}")
    if not mask.bits.any():
        raise NoVisiblePixels(f"instance {mask.instance_id} has an empty mask")
    proj = _project_positions(scene.means[mask.bits], mask.instance_id,
                              pose, intr, depth=None, delta=None)
    rendered = splat.render(scene, pose, intr, subset=mask, workers=workers)
    out = crop(rendered.color, proj, pad=pad,
               instance_id=mask.instance_id, pose_id=pose.pose_id, origin=origin)
    return PromptImage(pixels=out.pixels, instance_id=mask.instance_id,
                       pose_id=pose.pose_id, origin=origin, mode="seggauss")


@dataclass(frozen=True)
class SkippedView:
    origin: str
    view: str
    reason: str


def build_prompt_set(
    mask: InstanceMask,
    cloud: PointCloud,
    gaussians: splat.GaussianScene,
    intr: Intrinsics,
    dataset_views: list,        # (pose, image HxWx3, depth or None, delta or None)
    interpolated_views: list,   # (label, pose, image HxWx3)
    mode: str,
    pad: int = DEFAULT_PAD,
    workers: int | None = None,
):
    """Generate one prompt per view, skipping views where the object is gone.

    Dataset views apply the mode to the captured image (seggauss renders
    the instance's Gaussians from the dataset pose instead, since isolating
    an object inside a photograph would need a 2-D mask). Interpolated
    views apply the mode to the synthesized image. Returns the prompt list
    and the record of skipped views; a skipped view never aborts the
    instance.
    """
    if mode not in ("crop", "blur", "seggauss"):
        raise ValueError(f"unknown prompt mode {mode!r}")
    prompts: list[PromptImage] = []
    skipped: list[SkippedView] = []

    def make(pose, image, depth, delta, origin, view_label):
        if mode == "seggauss":
            return segmented_gaussian_prompt(gaussians, mask, pose, intr, pad=pad,
                                             origin=origin, workers=workers)
        proj = project_mask(mask, cloud, pose, intr, depth, delta)
        if mode == "crop":
            return crop(image, proj, pad=pad, instance_id=mask.instance_id,
                        pose_id=pose.pose_id, origin=origin)
        return blur_reverse_mask(image, proj, instance_id=mask.instance_id,
                                 pose_id=pose.pose_id, origin=origin)

    for pose, image, depth, delta in dataset_views:
        try:
            prompts.append(make(pose, image, depth, delta,
                                ORIGIN_DATASET, str(pose.pose_id)))
        except (NoVisiblePixels, DegenerateCrop) as exc:
            skipped.append(SkippedView(ORIGIN_DATASET, str(pose.pose_id), str(exc)))

    for label, pose, image in interpolated_views:
        try:
            # interpolated poses carry no captured depth; skip occlusion
            prompts.append(make(pose, image, None, None,
                                ORIGIN_INTERPOLATED, label))
        except (NoVisiblePixels, DegenerateCrop) as exc:
            skipped.append(SkippedView(ORIGIN_INTERPOLATED, label, str(exc)))

    return prompts, skipped
