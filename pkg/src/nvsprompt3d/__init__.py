"""Object-centered novel view prompting for 3-D instance labeling.

Given a colored point cloud, per-instance 3-D masks, posed depth images
and camera intrinsics, this package selects the views that see each
instance best, synthesizes interpolated object-centered views with a
forward Gaussian splat renderer, turns every view into a hard visual
prompt, and fuses per-view embeddings with weighted feature balancing to
label instances against a query set.
"""

from .errors import PipelineError
from .scene_io import (
    CameraPose,
    DepthMap,
    InstanceMask,
    Intrinsics,
    PointCloud,
    Scene,
    load_ply,
    load_scene,
    read_depth,
    read_features,
    read_image,
    write_depth,
    write_features,
    write_image,
    write_ply,
)
from .geometry import (
    InterpolationParams,
    ProjectedPoint,
    VisibilityScore,
    geometric_median,
    interpolate_poses,
    look_at,
    project_points,
    select_top_k,
    visibility_score,
)
from .splat import Gaussian, GaussianScene, RenderedImage, init_from_pointcloud, project_gaussian, render
from .prompts import (
    MaskProjection,
    PromptImage,
    blur_reverse_mask,
    build_prompt_set,
    crop,
    project_mask,
    segmented_gaussian_prompt,
)
from .fusion import (
    FusionInput,
    MockEmbeddingProvider,
    SubprocessEmbeddingProvider,
    average_fuse,
    match_queries,
    mock_embed,
    wfb_fuse,
)
from .evaluation import (
    GroundTruthInstance,
    Prediction,
    SyntheticScene,
    ap_sweep,
    average_precision,
    make_synthetic_scene,
    write_scene_files,
)
from .pipeline import RunConfig, RunReport, run

__version__ = "0.1.0"

__all__ = [
    "PipelineError",
    "CameraPose", "DepthMap", "InstanceMask", "Intrinsics", "PointCloud", "Scene",
    "load_ply", "load_scene", "read_depth", "read_features", "read_image",
    "write_depth", "write_features", "write_image", "write_ply",
    "InterpolationParams", "ProjectedPoint", "VisibilityScore",
    "geometric_median", "interpolate_poses", "look_at", "project_points",
    "select_top_k", "visibility_score",
    "Gaussian", "GaussianScene", "RenderedImage",
    "init_from_pointcloud", "project_gaussian", "render",
    "MaskProjection", "PromptImage", "blur_reverse_mask", "build_prompt_set",
    "crop", "project_mask", "segmented_gaussian_prompt",
    "FusionInput", "MockEmbeddingProvider", "SubprocessEmbeddingProvider",
    "average_fuse", "match_queries", "mock_embed", "wfb_fuse",
    "GroundTruthInstance", "Prediction", "SyntheticScene",
    "ap_sweep", "average_precision", "make_synthetic_scene", "write_scene_files",
    "RunConfig", "RunReport", "run",
]
