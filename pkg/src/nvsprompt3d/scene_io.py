"""Scene ingestion, validation and artifact serialization.

File formats
------------
Point cloud
    PLY, ascii or binary little-endian, with vertex properties ``x y z``
    (float or double) and ``red green blue`` (uchar). Colors are rescaled
    to [0, 1] on load; everything 8-bit lives only at file boundaries.
Depth map (``.dmap``)
    16-byte header (magic ``DMAP``, uint32 width, uint32 height, uint32
    reserved) followed by height*width little-endian float32 meters in row
    major order. Values <= 0 mark invalid pixels.
Feature file (``.feat``)
    16-byte header (magic ``FEAT``, uint32 count, uint32 dim, uint32
    reserved) followed by count*dim little-endian float64. Round-trips
    bitwise.
Scene manifest (JSON)
    Keys ``point_cloud, masks, poses, intrinsics, depth_dir, image_dir,
    delta, top_k, n_interp, alpha, prompt_mode, fusion_mode`` and the
    optional ``queries``. Relative paths resolve against the manifest's
    directory. Poses are stored camera-to-world (the usual capture
    convention) and inverted to world-to-camera on load. Depth maps and
    images are looked up as ``<depth_dir>/<pose_id>.dmap`` and
    ``<image_dir>/<pose_id>.png``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatch,
    IoFailure,
    MalformedHeader,
    MissingFile,
    SchemaViolation,
    UnsupportedPlyVariant,
)

PROMPT_MODES = ("crop", "blur", "seggauss")
FUSION_MODES = ("wfb", "average")

_DMAP_MAGIC = b"DMAP"
_FEAT_MAGIC = b"FEAT"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloud:
    """N colored points in world coordinates (meters), colors in [0, 1]."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray     # (N, 3) float64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        col = np.asarray(self.colors, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be (N, 3) with N >= 1")
        if col.shape != pos.shape:
            raise ValueError("colors must match positions shape")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        if not np.isfinite(col).all() or col.min() < 0.0 or col.max() > 1.0:
            raise ValueError("colors must be finite and within [0, 1]")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "colors", _freeze(col))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class InstanceMask:
    """Binary membership vector over the point cloud."""

    instance_id: int
    bits: np.ndarray  # (N,) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 1:
            raise ValueError("bits must be a 1-D vector")
        if not bits.any():
            raise ValueError("mask must have at least one set bit")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def indices(self) -> np.ndarray:
        return np.nonzero(self.bits)[0]

    def count(self) -> int:
        return int(self.bits.sum())


_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)
    pose_id: int = -1

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3) or not np.isfinite(r).all() or not np.isfinite(t).all():
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def up(self) -> np.ndarray:
        """Camera up direction in world coordinates (unit norm).

        The camera-to-world rotation has columns [right, up, forward], so
        the up direction is its second column, i.e. the second row of the
        world-to-camera rotation.
        """
        u = self.rotation[1, :].copy()
        return u / np.linalg.norm(u)

    def camera_to_world(self) -> np.ndarray:
        """4x4 homogeneous camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = self.center
        return m

    def world_to_camera(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_camera_to_world(cls, matrix: np.ndarray, pose_id: int = -1) -> "CameraPose":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("camera_to_world must be a 4x4 matrix")
        r_c2w = m[:3, :3]
        center = m[:3, 3]
        rot = r_c2w.T
        return cls(rotation=rot, translation=-rot @ center, pose_id=pose_id)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels plus the image dimensions."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width and height must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters; values <= 0 are invalid."""

    values: np.ndarray  # (H, W) float32
    pose_id: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("depth values must be a 2-D array")
        if not np.isfinite(v).all():
            raise ValueError("depth values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class QuerySet:
    """Open-vocabulary queries: labels plus either vectors or reference images."""

    labels: tuple
    features: Optional[np.ndarray] = None   # (Q, D), precomputed
    image_paths: tuple = ()                 # embedded by the provider at fuse time

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("query set must not be empty")
        if self.features is None and len(self.image_paths) != len(self.labels):
            raise ValueError("need one reference image or feature row per label")
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != len(self.labels):
                raise ValueError("features must be (len(labels), D)")
            object.__setattr__(self, "features", _freeze(f))


@dataclass(frozen=True)
class SceneManifest:
    """Parsed and validated manifest, with paths resolved to absolute."""

    point_cloud: Path
    masks: Path
    poses: Path
    intrinsics: Path
    depth_dir: Path
    image_dir: Path
    delta: float
    top_k: int
    n_interp: int
    alpha: float
    prompt_mode: str
    fusion_mode: str
    queries: Optional[Path] = None


@dataclass(frozen=True)
class Scene:
    """Fully validated in-memory scene. Immutable and shareable across threads."""

    cloud: PointCloud
    masks: tuple          # InstanceMask, sorted by instance_id
    poses: tuple          # CameraPose, sorted by pose_id
    intrinsics: Intrinsics
    depths: dict          # pose_id -> DepthMap
    image_paths: dict     # pose_id -> Path
    manifest: SceneManifest
    queries: Optional[QuerySet] = None

    def pose_by_id(self, pose_id: int) -> CameraPose:
        for p in self.poses:
            if p.pose_id == pose_id:
                return p
        raise KeyError(f"no pose with id {pose_id}")

    def load_image(self, pose_id: int) -> np.ndarray:
        return read_image(self.image_paths[pose_id])


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_ply(path) -> PointCloud:
    """Load a colored point cloud from an ascii or binary-LE PLY file.

    Requires vertex properties x, y, z and red, green, blue (uchar). Extra
    scalar vertex properties are ignored; list properties and big-endian
    files are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile("point_cloud", path)
    with open(path, "rb") as fh:
        data = fh.read()

    if not data.startswith(b"ply"):
        raise MalformedHeader(f"{path}: missing 'ply' magic")
    end = data.find(b"end_header\n")
    if end < 0:
        raise MalformedHeader(f"{path}: missing end_header")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    n_vertices = None
    props = []       # (name, numpy letter code) for the vertex element
    in_vertex = False
    seen_vertex = False
    for line in header_lines[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2:
                raise MalformedHeader(f"{path}: bad format line")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise MalformedHeader(f"{path}: bad element line {line!r}")
            if tokens[1] == "vertex":
                in_vertex = True
                seen_vertex = True
                n_vertices = int(tokens[2])
            else:
                if not seen_vertex:
                    # vertex data must come first so we can locate it
                    raise UnsupportedPlyVariant(
                        f"{path}: element {tokens[1]!r} precedes vertex data")
                in_vertex = False
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise UnsupportedPlyVariant(f"{path}: list property on vertex element")
            if tokens[1] not in _PLY_TYPES:
                raise UnsupportedPlyVariant(f"{path}: property type {tokens[1]!r}")
            props.append((tokens[2], _PLY_TYPES[tokens[1]]))

    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedPlyVariant(f"{path}: format {fmt!r} not supported")
    if n_vertices is None:
        raise MalformedHeader(f"{path}: no vertex element")
    names = [n for n, _ in props]
    for required in ("x", "y", "z", "red", "green", "blue"):
        if required not in names:
            raise UnsupportedPlyVariant(f"{path}: missing vertex property {required!r}")
    for cname in ("red", "green", "blue"):
        if dict(props)[cname] != "u1":
            raise UnsupportedPlyVariant(f"{path}: {cname} must be uchar")

    if fmt == "ascii":
        text = body.decode("ascii", errors="replace").split()
        n_cols = len(props)
        if len(text) < n_vertices * n_cols:
            raise MalformedHeader(f"{path}: truncated vertex data")
        table = np.array(text[: n_vertices * n_cols], dtype=np.float64)
        table = table.reshape(n_vertices, n_cols)
        cols = {name: table[:, i] for i, (name, _) in enumerate(props)}
    else:
        dtype = np.dtype([(name, "<" + code) for name, code in props])
        if len(body) < n_vertices * dtype.itemsize:
            raise MalformedHeader(f"{path}: truncated vertex data")
        rec = np.frombuffer(body, dtype=dtype, count=n_vertices)
        cols = {name: rec[name].astype(np.float64) for name, _ in props}

    positions = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1) / 255.0
    try:
        return PointCloud(positions=positions, colors=colors)
    except ValueError as exc:
        raise SchemaViolation("point_cloud", str(exc)) from exc


def write_ply(cloud: PointCloud, path) -> None:
    """Write a point cloud as binary-LE PLY with double positions and uchar colors."""
    path = Path(path)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    rec = np.empty(len(cloud), dtype=np.dtype(
        [("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
         ("red", "u1"), ("green", "u1"), ("blue", "u1")]))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    quant = np.floor(cloud.colors * 255.0 + 0.5).astype(np.uint8)
    rec["red"], rec["green"], rec["blue"] = quant.T
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# depth maps
# ---------------------------------------------------------------------------

def write_depth(depth: DepthMap, path) -> None:
    h, w = depth.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_DMAP_MAGIC)
            fh.write(struct.pack("<III", w, h, 0))
            fh.write(np.ascontiguousarray(depth.values, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_depth(path, pose_id: int = -1) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise MissingFile("depth", path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _DMAP_MAGIC:
        raise MalformedHeader(f"{path}: bad depth header")
    w, h, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * w * h
    if len(raw) < expected:
        raise MalformedHeader(f"{path}: truncated depth data")
    values = np.frombuffer(raw[16:expected], dtype="<f4").reshape(h, w)
    return DepthMap(values=values, pose_id=pose_id)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def write_image(pixels: np.ndarray, path) -> None:
    """Write an H x W x 3 float image in [0, 1] as an 8-bit PNG.

    Quantization is round-half-up: byte = floor(255 * v + 0.5).
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise IoFailure("image must have shape (H, W, 3)")
    if not np.isfinite(arr).all():
        raise IoFailure("image contains non-finite values")
    quant = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(quant, mode="RGB").save(Path(path), format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """Load an RGB PNG as float64 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingFile("image", path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return arr / 255.0


# ---------------------------------------------------------------------------
# feature vectors
# ---------------------------------------------------------------------------

def write_features(vectors: np.ndarray, path) -> None:
    """Write an M x D float64 matrix; round-trips bitwise via read_features."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise IoFailure("features must be a 2-D matrix")
    if not np.isfinite(arr).all():
        raise IoFailure("features contain non-finite values")
    m, d = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_FEAT_MAGIC)
            fh.write(struct.pack("<III", m, d, 0))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_features(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile("features", path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _FEAT_MAGIC:
        raise MalformedHeader(f"{path}: bad feature header")
    m, d, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + 8 * m * d
    if len(raw) < expected:
        raise MalformedHeader(f"{path}: truncated feature data")
    return np.frombuffer(raw[16:expected], dtype="<f8").reshape(m, d).copy()


# ---------------------------------------------------------------------------
# manifest / scene
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, kind, field_name: str):
    if key not in obj:
        raise SchemaViolation(field_name, "missing key")
    value = obj[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    raise SchemaViolation(field_name, f"expected {kind.__name__}, got {type(value).__name__}")


def load_manifest(path) -> SceneManifest:
    """Parse and validate a scene manifest without loading the referenced data."""
    path = Path(path)
    if not path.exists():
        raise MissingFile("manifest", path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("manifest", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaViolation("manifest", "top level must be an object")

    root = path.parent

    def resolve(key):
        return root / _require(raw, key, str, key)

    delta = _require(raw, "delta", float, "delta")
    top_k = _require(raw, "top_k", int, "top_k")
    n_interp = _require(raw, "n_interp", int, "n_interp")
    alpha = _require(raw, "alpha", float, "alpha")
    prompt_mode = _require(raw, "prompt_mode", str, "prompt_mode")
    fusion_mode = _require(raw, "fusion_mode", str, "fusion_mode")

    if not delta > 0:
        raise SchemaViolation("delta", f"must be > 0, got {delta}")
    if top_k < 1:
        raise SchemaViolation("top_k", f"must be >= 1, got {top_k}")
    if n_interp < 0:
        raise SchemaViolation("n_interp", f"must be >= 0, got {n_interp}")
    if not (0.0 < alpha <= 1.0):
        raise SchemaViolation("alpha", f"must be in (0, 1], got {alpha}")
    if prompt_mode not in PROMPT_MODES:
        raise SchemaViolation("prompt_mode", f"must be one of {PROMPT_MODES}")
    if fusion_mode not in FUSION_MODES:
        raise SchemaViolation("fusion_mode", f"must be one of {FUSION_MODES}")

    queries = root / raw["queries"] if "queries" in raw else None
    return SceneManifest(
        point_cloud=resolve("point_cloud"),
        masks=resolve("masks"),
        poses=resolve("poses"),
        intrinsics=resolve("intrinsics"),
        depth_dir=resolve("depth_dir"),
        image_dir=resolve("image_dir"),
        delta=delta,
        top_k=top_k,
        n_interp=n_interp,
        alpha=alpha,
        prompt_mode=prompt_mode,
        fusion_mode=fusion_mode,
        queries=queries,
    )


def _load_masks(path, n_points: int):
    if not path.exists():
        raise MissingFile("masks", path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("masks", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise SchemaViolation("masks", "must be a non-empty array")
    masks = []
    seen = set()
    for i, entry in enumerate(raw):
        field_name = f"masks[{i}]"
        instance_id = _require(entry, "instance_id", int, field_name + ".instance_id")
        if instance_id in seen:
            raise SchemaViolation(field_name, f"duplicate instance_id {instance_id}")
        seen.add(instance_id)
        indices = entry.get("indices")
        if not isinstance(indices, list) or not indices:
            raise SchemaViolation(field_name + ".indices", "must be a non-empty array")
        idx = np.asarray(indices, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= n_points:
            raise DimensionMismatch(
                field_name + ".indices",
                f"index out of range for point cloud of size {n_points}")
        bits = np.zeros(n_points, dtype=bool)
        bits[idx] = True
        masks.append(InstanceMask(instance_id=instance_id, bits=bits))
    masks.sort(key=lambda m: m.instance_id)
    return tuple(masks)


def _load_poses(path):
    if not path.exists():
        raise MissingFile("poses", path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("poses", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise SchemaViolation("poses", "must be a non-empty array")
    poses = []
    seen = set()
    for i, entry in enumerate(raw):
        field_name = f"poses[{i}]"
        pose_id = _require(entry, "pose_id", int, field_name + ".pose_id")
        if pose_id in seen:
            raise SchemaViolation(field_name, f"duplicate pose_id {pose_id}")
        seen.add(pose_id)
        matrix = entry.get("camera_to_world")
        if not isinstance(matrix, list) or len(matrix) != 16:
            raise SchemaViolation(field_name + ".camera_to_world",
                                  "must be an array of 16 row-major floats")
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        try:
            poses.append(CameraPose.from_camera_to_world(m, pose_id=pose_id))
        except ValueError as exc:
            raise SchemaViolation(field_name + ".camera_to_world", str(exc)) from exc
    poses.sort(key=lambda p: p.pose_id)
    return tuple(poses)


def _load_intrinsics(path) -> Intrinsics:
    if not path.exists():
        raise MissingFile("intrinsics", path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("intrinsics", f"invalid JSON: {exc}") from exc
    try:
        return Intrinsics(
            fx=_require(raw, "fx", float, "intrinsics.fx"),
            fy=_require(raw, "fy", float, "intrinsics.fy"),
            cx=_require(raw, "cx", float, "intrinsics.cx"),
            cy=_require(raw, "cy", float, "intrinsics.cy"),
            width=_require(raw, "width", int, "intrinsics.width"),
            height=_require(raw, "height", int, "intrinsics.height"),
        )
    except ValueError as exc:
        raise SchemaViolation("intrinsics", str(exc)) from exc


def load_queries(path) -> QuerySet:
    path = Path(path)
    if not path.exists():
        raise MissingFile("queries", path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("queries", f"invalid JSON: {exc}") from exc
    labels = raw.get("labels")
    if not isinstance(labels, list) or not labels:
        raise SchemaViolation("queries.labels", "must be a non-empty array")
    root = path.parent
    if "features" in raw:
        feats = read_features(root / raw["features"])
        if feats.shape[0] != len(labels):
            raise DimensionMismatch(
                "queries.features",
                f"{feats.shape[0]} rows for {len(labels)} labels")
        return QuerySet(labels=tuple(labels), features=feats)
    images = raw.get("images")
    if not isinstance(images, list) or len(images) != len(labels):
        raise SchemaViolation("queries.images", "need one image per label")
    paths = tuple(root / p for p in images)
    for p in paths:
        if not p.exists():
            raise MissingFile("queries.images", p)
    return QuerySet(labels=tuple(labels), image_paths=paths)


def load_scene(manifest_path) -> Scene:
    """Load and cross-validate a full scene from its manifest.

    Either returns a scene satisfying every type invariant or raises a
    named error; no partially valid scene escapes.
    """
    manifest = load_manifest(manifest_path)
    cloud = load_ply(manifest.point_cloud)
    masks = _load_masks(manifest.masks, len(cloud))
    poses = _load_poses(manifest.poses)
    intrinsics = _load_intrinsics(manifest.intrinsics)

    depths = {}
    image_paths = {}
    for pose in poses:
        dpath = manifest.depth_dir / f"{pose.pose_id}.dmap"
        if not dpath.exists():
            raise MissingFile(f"depth_dir[{pose.pose_id}]", dpath)
        depth = read_depth(dpath, pose_id=pose.pose_id)
        if depth.shape != (intrinsics.height, intrinsics.width):
            raise DimensionMismatch(
                f"depth_dir[{pose.pose_id}]",
                f"depth is {depth.shape}, intrinsics say "
                f"({intrinsics.height}, {intrinsics.width})")
        depths[pose.pose_id] = depth
        ipath = manifest.image_dir / f"{pose.pose_id}.png"
        if not ipath.exists():
            raise MissingFile(f"image_dir[{pose.pose_id}]", ipath)
        image_paths[pose.pose_id] = ipath

    queries = load_queries(manifest.queries) if manifest.queries else None
    return Scene(
        cloud=cloud,
        masks=masks,
        poses=poses,
        intrinsics=intrinsics,
        depths=depths,
        image_paths=image_paths,
        manifest=manifest,
        queries=queries,
    )
