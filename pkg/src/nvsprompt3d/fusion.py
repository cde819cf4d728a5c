"""Feature extraction over prompt images and weighted feature balancing.

Embeddings come through a provider interface so no ML runtime enters the
core. The built-in provider embeds an image as an L2-normalized 4x4x4 RGB
histogram (64 dims); external models attach through a line-delimited JSON
subprocess protocol:

    provider announces   {"dimension": D}
    request              {"id": n, "image_path": "..."}
    response             {"id": n, "vector": [D floats]}

Per-instance features from the k best dataset views and the interpolated
views are fused by weighted feature balancing,

    F = normalize( sum_i f_i + (alpha / n_interp) * sum_j fhat_j ),

which caps the interpolated mass at alpha * (k - 1) regardless of how many
views were interpolated, so synthesized views can never crowd out the
captured ones. Plain normalized averaging is kept as the baseline.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DegenerateSum, PipelineError, UnnormalizedInput
from .scene_io import read_image

MOCK_BINS = 4
MOCK_DIM = MOCK_BINS ** 3
UNIT_TOL = 1e-6
_SUM_TOL = 1e-12


def normalize(vector: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm; a vanishing norm raises DegenerateSum."""
    v = np.asarray(vector, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < _SUM_TOL:
        raise DegenerateSum(f"cannot normalize vector with norm {n:.3g}")
    return v / n


def is_unit(vector: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(np.linalg.norm(np.asarray(vector, dtype=np.float64)) - 1.0) <= tol


def mock_embed(image: np.ndarray) -> np.ndarray:
    """Deterministic stand-in embedding: normalized 4x4x4 RGB histogram.

    Channel bins are floor(value * 4) clamped to 3, flattened as
    r * 16 + g * 4 + b. Invariant to any permutation of pixels.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.size == 0:
        raise ValueError("image must be a non-empty (H, W, 3) array")
    bins = np.clip((arr * MOCK_BINS).astype(np.int64), 0, MOCK_BINS - 1)
    flat = (bins[..., 0] * MOCK_BINS + bins[..., 1]) * MOCK_BINS + bins[..., 2]
    hist = np.bincount(flat.ravel(), minlength=MOCK_DIM).astype(np.float64)
    return normalize(hist)


class EmbeddingProvider(Protocol):
    """Anything that deterministically embeds image files into R^D."""

    def dimension(self) -> int: ...

    def embed_image_file(self, path) -> np.ndarray: ...


class MockEmbeddingProvider:
    """Built-in provider backed by :func:`mock_embed`."""

    def dimension(self) -> int:
        return MOCK_DIM

    def embed_image_file(self, path) -> np.ndarray:
        return mock_embed(read_image(path))

    def close(self) -> None:
        pass


class SubprocessEmbeddingProvider:
    """Client for the line-delimited JSON embedding protocol over stdio.

    Requests are serialized under a lock; responses may arrive out of order
    and are matched by id.
    """

    def __init__(self, command):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        except OSError as exc:
            raise PipelineError(f"cannot start provider {argv!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._pending: dict[int, list] = {}
        self._next_id = 0
        hello = self._read_line()
        if "dimension" not in hello:
            raise PipelineError(f"provider did not announce a dimension: {hello}")
        self._dim = int(hello["dimension"])

    def _read_line(self) -> dict:
        line = self._proc.stdout.readline()
        if not line:
            raise PipelineError("embedding provider closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise PipelineError(f"provider sent invalid JSON: {line!r}") from exc

    def dimension(self) -> int:
        return self._dim

    def embed_image_file(self, path) -> np.ndarray:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            self._proc.stdin.write(
                json.dumps({"id": request_id, "image_path": str(path)}) + "\n")
            self._proc.stdin.flush()
            while request_id not in self._pending:
                reply = self._read_line()
                if "id" not in reply or "vector" not in reply:
                    raise PipelineError(f"malformed provider response: {reply}")
                self._pending[int(reply["id"])] = reply["vector"]
            vector = np.asarray(self._pending.pop(request_id), dtype=np.float64)
        if vector.shape != (self._dim,) or not np.isfinite(vector).all():
            raise PipelineError(
                f"provider returned a bad vector for {path} "
                f"(shape {vector.shape}, dim {self._dim})")
        return vector

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_provider(spec: str) -> EmbeddingProvider:
    """Build a provider from its CLI spec: ``mock`` or ``subprocess:CMD``."""
    if spec == "mock":
        return MockEmbeddingProvider()
    if spec.startswith("subprocess:"):
        return SubprocessEmbeddingProvider(spec[len("subprocess:"):])
    raise ValueError(f"unknown provider spec {spec!r}")


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionInput:
    """Operands of weighted feature balancing for one instance."""

    top_k_features: Sequence[np.ndarray]
    interp_features: Sequence[np.ndarray] = field(default_factory=tuple)
    n_interp: int = 0
    alpha: float = 0.5

    def __post_init__(self):
        if len(self.top_k_features) < 1:
            raise ValueError("need at least one top-k feature")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if len(self.interp_features) > 0 and self.n_interp < 1:
            raise ValueError("n_interp must be >= 1 when interpolated features exist")


def wfb_fuse(fusion_input: FusionInput) -> np.ndarray:
    """Weighted feature balancing of top-k and interpolated view features."""
    total = np.sum([np.asarray(f, dtype=np.float64)
                    for f in fusion_input.top_k_features], axis=0)
    if len(fusion_input.interp_features) > 0:
        interp_sum = np.sum([np.asarray(f, dtype=np.float64)
                             for f in fusion_input.interp_features], axis=0)
        total = total + (fusion_input.alpha / fusion_input.n_interp) * interp_sum
    return normalize(total)


def average_fuse(features: Sequence[np.ndarray]) -> np.ndarray:
    """Baseline fusion: normalized mean of all view features."""
    if len(features) == 0:
        raise ValueError("cannot average zero features")
    mean = np.mean([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    return normalize(mean)


def match_queries(instance_features: np.ndarray, query_features: np.ndarray):
    """Cosine similarities and argmax labels of instances against queries.

    Both inputs must be unit norm row-wise; similarity is then the plain
    dot product. Ties resolve to the smaller query index.
    """
    inst = np.atleast_2d(np.asarray(instance_features, dtype=np.float64))
    quer = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    if inst.shape[1] != quer.shape[1]:
        raise UnnormalizedInput(
            f"dimension mismatch: instances are {inst.shape[1]}-d, "
            f"queries are {quer.shape[1]}-d")
    for name, mat in (("instance", inst), ("query", quer)):
        norms = np.linalg.norm(mat, axis=1)
        if np.abs(norms - 1.0).max() > UNIT_TOL:
            raise UnnormalizedInput(
                f"{name} features must be unit norm (worst deviation "
                f"{np.abs(norms - 1).max():.3g})")
    similarity = inst @ quer.T
    labels = similarity.argmax(axis=1)  # argmax takes the first maximum
    return similarity, labels
