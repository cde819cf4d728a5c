"""End-to-end orchestration: view selection, interpolation, rendering,
prompting, fusion and evaluation.

Every stage reads its inputs from the output directory (or the manifest)
and writes its own artifacts there, so running the staged subcommands in
order is byte-for-byte the same as one monolithic run; ``run`` simply
invokes the stages in sequence. All stored paths are relative to the
output directory and all JSON is written with sorted keys, which makes two
runs with identical inputs produce identical bytes at any worker count.
Wall-clock timings are deliberately kept out of the deterministic
artifacts and land in ``timings.json``.

Artifacts
---------
selection.json      per instance: rank-ordered pose ids and all scores
interpolation.json  per instance: median, selected (possibly re-aimed)
                    poses and interpolated poses, as camera-to-world rows
renders/            full renders of interpolated (and re-aimed) views
prompts/            prompt PNGs, <origin>_<view>_<mode>.png per instance
features/           fused feature vector per instance
run_report.json     selection through matching, per instance
metrics.json        AP / AP50 / AP25 against ground truth
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from . import fusion, prompts, splat
from .errors import (
    CoincidentTarget,
    DegenerateUp,
    EmptyMask,
    MissingStageArtifact,
    NoVisiblePose,
    PipelineError,
    SchemaViolation,
)
from .evaluation import Prediction, ap_sweep, load_ground_truth
from .geometry import (
    geometric_median,
    interpolate_poses,
    look_at,
    select_top_k,
    visibility_score,
)
from .scene_io import (
    FUSION_MODES,
    PROMPT_MODES,
    CameraPose,
    Scene,
    load_queries,
    load_scene,
    read_image,
    write_features,
    write_image,
)

SELECTION_FILE = "selection.json"
INTERPOLATION_FILE = "interpolation.json"
RENDERS_FILE = "renders_index.json"
PROMPTS_FILE = "prompts_index.json"
REPORT_FILE = "run_report.json"
METRICS_FILE = "metrics.json"
TIMINGS_FILE = "timings.json"


@dataclass(frozen=True)
class RunConfig:
    """CLI-level configuration; None fields fall back to the manifest."""

    manifest: Path
    out: Path
    delta: Optional[float] = None
    top_k: Optional[int] = None
    n_interp: Optional[int] = None
    alpha: Optional[float] = None
    prompt_mode: Optional[str] = None
    fusion_mode: Optional[str] = None
    adjust_topk: bool = False
    workers: int = 1
    seed: int = 0
    provider: str = "mock"
    queries: Optional[Path] = None
    gt: Optional[Path] = None
    pad: int = prompts.DEFAULT_PAD


@dataclass(frozen=True)
class Params:
    """Effective per-run parameters after applying overrides."""

    delta: float
    top_k: int
    n_interp: int
    alpha: float
    prompt_mode: str
    fusion_mode: str
    adjust_topk: bool
    pad: int


@dataclass
class RunReport:
    """Outcome of a full run; mirrors run_report.json plus timings."""

    instances: list
    parameters: dict
    timings: dict

    @property
    def failed_instances(self):
        return [i for i in self.instances if i.get("status") != "ok"]


def _effective_params(scene: Scene, config: RunConfig) -> Params:
    m = scene.manifest
    params = Params(
        delta=config.delta if config.delta is not None else m.delta,
        top_k=config.top_k if config.top_k is not None else m.top_k,
        n_interp=config.n_interp if config.n_interp is not None else m.n_interp,
        alpha=config.alpha if config.alpha is not None else m.alpha,
        prompt_mode=config.prompt_mode or m.prompt_mode,
        fusion_mode=config.fusion_mode or m.fusion_mode,
        adjust_topk=config.adjust_topk,
        pad=config.pad,
    )
    if not params.delta > 0:
        raise SchemaViolation("delta", f"must be > 0, got {params.delta}")
    if params.top_k < 1:
        raise SchemaViolation("top_k", f"must be >= 1, got {params.top_k}")
    if params.n_interp < 0:
        raise SchemaViolation("n_interp", f"must be >= 0, got {params.n_interp}")
    if not (0.0 < params.alpha <= 1.0):
        raise SchemaViolation("alpha", f"must be in (0, 1], got {params.alpha}")
    if params.prompt_mode not in PROMPT_MODES:
        raise SchemaViolation("prompt_mode", f"must be one of {PROMPT_MODES}")
    if params.fusion_mode not in FUSION_MODES:
        raise SchemaViolation("fusion_mode", f"must be one of {FUSION_MODES}")
    return params


def _setup(config: RunConfig):
    scene = load_scene(config.manifest)
    params = _effective_params(scene, config)
    config.out.mkdir(parents=True, exist_ok=True)
    splat_workers = min(max(config.workers, 1), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(splat_workers)
    return scene, params


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _read_stage(out: Path, name: str):
    path = out / name
    if not path.exists():
        raise MissingStageArtifact(path)
    return json.loads(path.read_text())


def _pose_to_json(pose: CameraPose) -> list:
    return [float(x) for x in pose.camera_to_world().ravel()]


def _pose_from_json(values, pose_id: int) -> CameraPose:
    m = np.asarray(values, dtype=np.float64).reshape(4, 4)
    return CameraPose.from_camera_to_world(m, pose_id=pose_id)


def _map_instances(items, fn, workers: int):
    """Apply fn over items, optionally threaded; results keep item order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _record_timing(out: Path, stage: str, elapsed: float) -> None:
    path = out / TIMINGS_FILE
    data = json.loads(path.read_text()) if path.exists() else {}
    data[stage] = elapsed
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_select(config: RunConfig) -> dict:
    """Score every pose for every instance and keep the top-k per instance."""
    started = time.perf_counter()
    scene, params = _setup(config)

    def one(mask):
        entry = {"instance_id": mask.instance_id}
        try:
            scores = [visibility_score(mask, scene.cloud, pose, scene.intrinsics,
                                       scene.depths[pose.pose_id], params.delta)
                      for pose in scene.poses]
            entry["scores"] = [{"pose_id": s.pose_id, "score": s.score}
                               for s in scores]
            entry["pose_ids"] = select_top_k(scores, params.top_k)
            entry["status"] = "ok"
        except (EmptyMask, NoVisiblePose) as exc:
            entry["status"] = "skipped"
            entry["reason"] = str(exc)
        return entry

    instances = _map_instances(list(scene.masks), one, config.workers)
    payload = {"instances": instances}
    _write_json(config.out / SELECTION_FILE, payload)
    _record_timing(config.out, "select", time.perf_counter() - started)
    return payload


def stage_interpolate(config: RunConfig) -> dict:
    """Aim cameras at each instance's robust center and interpolate views."""
    started = time.perf_counter()
    scene, params = _setup(config)
    selection = _read_stage(config.out, SELECTION_FILE)
    masks = {m.instance_id: m for m in scene.masks}

    def one(sel):
        entry = {"instance_id": sel["instance_id"]}
        if sel.get("status") != "ok":
            entry["status"] = "skipped"
            entry["reason"] = sel.get("reason", "skipped in selection")
            return entry
        mask = masks[sel["instance_id"]]
        median = geometric_median(scene.cloud.positions[mask.bits])
        selected = [scene.pose_by_id(pid) for pid in sel["pose_ids"]]
        try:
            if params.adjust_topk:
                selected = [look_at(pose, median) for pose in selected]
            interpolated = []
            index = 0
            for pose_a, pose_b in zip(selected, selected[1:]):
                for step, pose in enumerate(
                        interpolate_poses(pose_a, pose_b, median, params.n_interp)
                        if params.n_interp > 0 else [], start=1):
                    interpolated.append({
                        "index": index,
                        "pair": [pose_a.pose_id, pose_b.pose_id],
                        "step": step,
                        "t": step / (params.n_interp + 1),
                        "camera_to_world": _pose_to_json(pose),
                    })
                    index += 1
        except (DegenerateUp, CoincidentTarget) as exc:
            entry["status"] = "skipped"
            entry["reason"] = str(exc)
            return entry
        entry["status"] = "ok"
        entry["median"] = [float(x) for x in median]
        entry["selected"] = [{"pose_id": p.pose_id,
                              "camera_to_world": _pose_to_json(p),
                              "adjusted": params.adjust_topk}
                             for p in selected]
        entry["interpolated"] = interpolated
        return entry

    instances = _map_instances(selection["instances"], one, config.workers)
    payload = {"instances": instances}
    _write_json(config.out / INTERPOLATION_FILE, payload)
    _record_timing(config.out, "interpolate", time.perf_counter() - started)
    return payload


def stage_render(config: RunConfig) -> dict:
    """Render the interpolated (and any re-aimed) views to PNG."""
    started = time.perf_counter()
    scene, _ = _setup(config)
    interpolation = _read_stage(config.out, INTERPOLATION_FILE)
    gaussians = splat.init_from_pointcloud(scene.cloud)

    def one(entry):
        out_entry = {"instance_id": entry["instance_id"],
                     "status": entry.get("status", "skipped")}
        if entry.get("status") != "ok":
            out_entry["reason"] = entry.get("reason", "")
            return out_entry
        inst_dir = config.out / "renders" / str(entry["instance_id"])
        inst_dir.mkdir(parents=True, exist_ok=True)
        interp_items = []
        for item in entry["interpolated"]:
            pose = _pose_from_json(item["camera_to_world"], pose_id=item["index"])
            rendered = splat.render(gaussians, pose, scene.intrinsics)
            rel = f"renders/{entry['instance_id']}/interpolated_{item['index']}.png"
            write_image(rendered.color, config.out / rel)
            interp_items.append({"index": item["index"], "path": rel})
        dataset_items = []
        for item in entry["selected"]:
            # re-aimed reference poses no longer match their captured image,
            # so they get re-rendered; which poses were re-aimed is recorded
            # in interpolation.json, keeping the stages flag-agnostic
            if not item["adjusted"]:
                continue
            pose = _pose_from_json(item["camera_to_world"],
                                   pose_id=item["pose_id"])
            rendered = splat.render(gaussians, pose, scene.intrinsics)
            rel = f"renders/{entry['instance_id']}/dataset_{item['pose_id']}.png"
            write_image(rendered.color, config.out / rel)
            dataset_items.append({"pose_id": item["pose_id"], "path": rel})
        out_entry["interpolated"] = interp_items
        out_entry["dataset"] = dataset_items
        return out_entry

    instances = _map_instances(interpolation["instances"], one, config.workers)
    payload = {"instances": instances}
    _write_json(config.out / RENDERS_FILE, payload)
    _record_timing(config.out, "render", time.perf_counter() - started)
    return payload


def stage_prompts(config: RunConfig) -> dict:
    """Generate one hard visual prompt per usable view of every instance."""
    started = time.perf_counter()
    scene, params = _setup(config)
    interpolation = _read_stage(config.out, INTERPOLATION_FILE)
    renders = _read_stage(config.out, RENDERS_FILE)
    renders_by_id = {e["instance_id"]: e for e in renders["instances"]}
    gaussians = splat.init_from_pointcloud(scene.cloud)
    masks = {m.instance_id: m for m in scene.masks}

    def one(entry):
        iid = entry["instance_id"]
        out_entry = {"instance_id": iid, "status": entry.get("status", "skipped")}
        if entry.get("status") != "ok":
            out_entry["reason"] = entry.get("reason", "")
            return out_entry
        mask = masks[iid]
        render_entry = renders_by_id[iid]
        rendered_dataset = {d["pose_id"]: d["path"]
                            for d in render_entry.get("dataset", [])}

        dataset_views = []
        for item in entry["selected"]:
            pose = _pose_from_json(item["camera_to_world"], pose_id=item["pose_id"])
            if item["adjusted"]:
                # the captured image and depth no longer match a re-aimed pose
                image = read_image(config.out / rendered_dataset[item["pose_id"]])
                dataset_views.append((pose, image, None, None))
            else:
                image = scene.load_image(item["pose_id"])
                dataset_views.append((pose, image,
                                      scene.depths[item["pose_id"]], params.delta))
        interpolated_views = []
        for item in render_entry.get("interpolated", []):
            meta = entry["interpolated"][item["index"]]
            pose = _pose_from_json(meta["camera_to_world"], pose_id=item["index"])
            image = read_image(config.out / item["path"])
            interpolated_views.append((str(item["index"]), pose, image))

        prompt_images, skipped = prompts.build_prompt_set(
            mask, scene.cloud, gaussians, scene.intrinsics,
            dataset_views, interpolated_views, params.prompt_mode, pad=params.pad)

        inst_dir = config.out / "prompts" / str(iid)
        inst_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for p in prompt_images:
            origin = "dataset" if p.origin == prompts.ORIGIN_DATASET else "interpolated"
            rel = f"prompts/{iid}/{origin}_{p.pose_id}_{p.mode}.png"
            write_image(p.pixels, config.out / rel)
            records.append({"origin": origin, "view": p.pose_id,
                            "mode": p.mode, "path": rel})
        out_entry["skipped_views"] = [
            {"origin": s.origin, "view": s.view, "reason": s.reason}
            for s in skipped]
        if not records:
            out_entry["status"] = "skipped"
            out_entry["reason"] = "every view was skipped"
        else:
            out_entry["prompts"] = records
        return out_entry

    instances = _map_instances(interpolation["instances"], one, config.workers)
    payload = {"instances": instances}
    _write_json(config.out / PROMPTS_FILE, payload)
    _record_timing(config.out, "prompts", time.perf_counter() - started)
    return payload


def _query_features(scene: Scene, config: RunConfig, provider):
    query_set = scene.queries
    if config.queries is not None:
        query_set = load_queries(config.queries)
    if query_set is None:
        raise SchemaViolation(
            "queries", "fusion needs queries (manifest key or --queries)")
    if query_set.features is not None:
        feats = query_set.features
        if feats.shape[1] != provider.dimension():
            raise SchemaViolation(
                "queries", f"feature dim {feats.shape[1]} does not match "
                f"provider dim {provider.dimension()}")
    else:
        feats = np.stack([provider.embed_image_file(p)
                          for p in query_set.image_paths])
    feats = np.stack([fusion.normalize(f) for f in feats])
    return list(query_set.labels), feats


def stage_fuse(config: RunConfig) -> dict:
    """Embed prompts, fuse per instance and match against the queries."""
    started = time.perf_counter()
    scene, params = _setup(config)
    selection = _read_stage(config.out, SELECTION_FILE)
    interpolation = _read_stage(config.out, INTERPOLATION_FILE)
    prompt_index = _read_stage(config.out, PROMPTS_FILE)
    selection_by_id = {e["instance_id"]: e for e in selection["instances"]}
    interp_by_id = {e["instance_id"]: e for e in interpolation["instances"]}

    provider = fusion.make_provider(config.provider)
    try:
        labels, query_feats = _query_features(scene, config, provider)
        (config.out / "features").mkdir(parents=True, exist_ok=True)

        def one(entry):
            iid = entry["instance_id"]
            report = {"instance_id": iid, "status": entry.get("status", "skipped")}
            sel = selection_by_id.get(iid, {})
            interp = interp_by_id.get(iid, {})
            report["selected_pose_ids"] = sel.get("pose_ids", [])
            report["scores"] = sel.get("scores", [])
            report["median"] = interp.get("median")
            report["interpolated"] = [
                {k: item[k] for k in ("index", "pair", "step", "t", "camera_to_world")}
                for item in interp.get("interpolated", [])]
            report["skipped_views"] = entry.get("skipped_views", [])
            if entry.get("status") != "ok":
                report["reason"] = entry.get("reason", "")
                return report
            top_feats = []
            interp_feats = []
            for rec in entry["prompts"]:
                vector = fusion.normalize(
                    provider.embed_image_file(config.out / rec["path"]))
                if rec["origin"] == "dataset":
                    top_feats.append(vector)
                else:
                    interp_feats.append(vector)
            try:
                if params.fusion_mode == "wfb":
                    fused = fusion.wfb_fuse(fusion.FusionInput(
                        top_k_features=top_feats,
                        interp_features=interp_feats,
                        n_interp=params.n_interp,
                        alpha=params.alpha))
                else:
                    fused = fusion.average_fuse(top_feats + interp_feats)
            except (ValueError, PipelineError) as exc:
                report["status"] = "skipped"
                report["reason"] = f"fusion failed: {exc}"
                return report
            rel = f"features/{iid}.feat"
            write_features(fused[None, :], config.out / rel)
            similarity, match = fusion.match_queries(fused[None, :], query_feats)
            report["prompts"] = [rec["path"] for rec in entry["prompts"]]
            report["fused_feature"] = rel
            report["label"] = labels[int(match[0])]
            report["similarity"] = float(similarity[0, int(match[0])])
            report["similarities"] = {
                label: float(similarity[0, qi]) for qi, label in enumerate(labels)}
            return report

        instances = _map_instances(prompt_index["instances"], one, config.workers)
    finally:
        close = getattr(provider, "close", None)
        if close:
            close()

    payload = {
        "parameters": {
            "delta": params.delta, "top_k": params.top_k,
            "n_interp": params.n_interp, "alpha": params.alpha,
            "prompt_mode": params.prompt_mode, "fusion_mode": params.fusion_mode,
            "adjust_topk": params.adjust_topk, "provider": config.provider,
        },
        "query_labels": labels,
        "instances": instances,
    }
    _write_json(config.out / REPORT_FILE, payload)
    _record_timing(config.out, "fuse", time.perf_counter() - started)
    return payload


def stage_eval(config: RunConfig) -> dict:
    """Score the run's labels and masks against ground truth."""
    started = time.perf_counter()
    scene, _ = _setup(config)
    report = _read_stage(config.out, REPORT_FILE)
    if config.gt is None:
        raise SchemaViolation("gt", "eval needs --gt pointing to ground truth")
    ground_truth = load_ground_truth(config.gt)
    masks = {m.instance_id: m for m in scene.masks}

    predictions = []
    per_instance = []
    for entry in report["instances"]:
        if entry.get("status") != "ok":
            continue
        mask = masks[entry["instance_id"]]
        predictions.append(Prediction(indices=mask.indices,
                                      label=entry["label"],
                                      confidence=entry["similarity"]))
        per_instance.append({"instance_id": entry["instance_id"],
                             "label": entry["label"],
                             "confidence": entry["similarity"]})
    metrics = ap_sweep(predictions, ground_truth)
    payload = {
        "scene_id": Path(config.manifest).stem,
        "AP": metrics["AP"],
        "AP50": metrics["AP50"],
        "AP25": metrics["AP25"],
        "per_instance": per_instance,
    }
    _write_json(config.out / METRICS_FILE, payload)
    _record_timing(config.out, "eval", time.perf_counter() - started)
    return payload


def run(config: RunConfig) -> RunReport:
    """Execute every stage in order; evaluation runs only when gt is given."""
    stage_select(config)
    stage_interpolate(config)
    stage_render(config)
    stage_prompts(config)
    report = stage_fuse(config)
    if config.gt is not None:
        stage_eval(config)
    timings_path = config.out / TIMINGS_FILE
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else {}
    return RunReport(instances=report["instances"],
                     parameters=report["parameters"],
                     timings=timings)
