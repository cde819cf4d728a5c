"""
Hard visual prompts: crop, blur-reverse-mask, segmented Gaussians
=================================================================

A hard prompt modifies the image an embedding model sees so that one
object dominates it, without touching the model: cropping cuts the padded
bounding box of the projected mask, blur-reverse-mask keeps the object
sharp inside a square it fills to about 70 percent while everything else
is box-blurred, and the segmented-Gaussian prompt re-renders only the
instance's own Gaussians on white.

The gallery lands in ``demos/output/04_prompts/``.
"""

from pathlib import Path

from nvsprompt3d import evaluation, prompts, splat
from nvsprompt3d.scene_io import write_image

out_dir = Path(__file__).parent / "output" / "04_prompts"
out_dir.mkdir(parents=True, exist_ok=True)

scene = evaluation.make_synthetic_scene(seed=7, n_boxes=3,
                                        points_per_box=400, n_poses=4)
gaussians = splat.init_from_pointcloud(scene.cloud)
intr = scene.intrinsics
pose = scene.poses[0]
view = splat.render(gaussians, pose, intr).color
write_image(view, out_dir / "raw_view.png")

for mask, label in zip(scene.masks, scene.labels):
    proj = prompts.project_mask(mask, scene.cloud, pose, intr,
                                scene.depths[pose.pose_id], delta=0.4)
    print(f"{label}: {proj.pixels.shape[0]} visible pixels, bbox {proj.bbox}")

    cropped = prompts.crop(view, proj, pad=10)
    write_image(cropped.pixels, out_dir / f"{label}_crop.png")

    blurred = prompts.blur_reverse_mask(view, proj)
    write_image(blurred.pixels, out_dir / f"{label}_blur.png")

    isolated = prompts.segmented_gaussian_prompt(gaussians, mask, pose, intr)
    write_image(isolated.pixels, out_dir / f"{label}_seggauss.png")

    sizes = {p.mode: p.pixels.shape[:2]
             for p in (cropped, blurred, isolated)}
    print(f"  prompt sizes: {sizes}")

# a full prompt set across dataset and interpolated views, with skip
# bookkeeping instead of hard failures
from nvsprompt3d import geometry

mask = scene.masks[0]
median = geometry.geometric_median(scene.cloud.positions[mask.bits])
pose_a, pose_b = scene.poses[0], scene.poses[1]
interp = geometry.interpolate_poses(pose_a, pose_b, median, 2)
dataset_views = [(p, splat.render(gaussians, p, intr).color,
                  scene.depths[p.pose_id], 0.4) for p in (pose_a, pose_b)]
interp_views = [(str(i), p, splat.render(gaussians, p, intr).color)
                for i, p in enumerate(interp)]
prompt_set, skipped = prompts.build_prompt_set(
    mask, scene.cloud, gaussians, intr, dataset_views, interp_views,
    mode="seggauss")
print(f"\nprompt set for '{scene.labels[0]}': {len(prompt_set)} images "
      f"({len(skipped)} views skipped)")
for i, p in enumerate(prompt_set):
    tag = "ref" if p.origin == prompts.ORIGIN_DATASET else "nvs"
    write_image(p.pixels, out_dir / f"set_{i}_{tag}.png")
    print(f"  {tag} prompt {i}: {p.pixels.shape[1]}x{p.pixels.shape[0]}")
