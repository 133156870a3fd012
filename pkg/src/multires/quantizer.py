"""K-means unit discovery, assignment, and multi-resolution target preparation."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientDataError, ShapeError

CODEBOOK_MAGIC = b"MRCB"
CODEBOOK_VERSION = 1


@dataclass(frozen=True)
class FitMetadata:
    iterations: int
    final_inertia: float
    seed: int


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (K, dim) float64
    fit_metadata: FitMetadata

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class UnitSequence:
    units: tuple[int, ...]
    resolution_ms: int
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.units)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.units, dtype=np.int64)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||p - c||^2 expanded for speed; clamped at zero against round-off.
    d2 = (points * points).sum(axis=1)[:, None] \
        - 2.0 * points @ centroids.T \
        + (centroids * centroids).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _plus_plus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining points coincide with chosen centroids.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = points[idx]
        d = ((points - centroids[j]) ** 2).sum(axis=1)
        np.minimum(closest, d, out=closest)
    return centroids


def fit_kmeans(features: np.ndarray, k: int, max_iters: int = 100, tol: float = 1e-7,
               seed: int = 0) -> Codebook:
    """Lloyd iterations from a k-means++ seeding; deterministic given the seed.

    Stops when the largest centroid shift falls below tol or after max_iters.
    An empty cluster keeps its previous centroid, which preserves the
    non-increasing inertia of Lloyd's method.
    """
    pts = np.asarray(features, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {pts.shape}")
    n = pts.shape[0]
    if n < k:
        raise InsufficientDataError(f"{n} points cannot support {k} clusters")
    if n > 1 and np.all(pts == pts[0]):
        warnings.warn("all feature points identical; codebook centroids are duplicated")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6B6D])))
    centroids = _plus_plus_seed(pts, k, rng)
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        d2 = _sq_distances(pts, centroids)
        labels = d2.argmin(axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = pts[members].mean(axis=0)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    final_inertia = float(_sq_distances(pts, centroids).min(axis=1).sum())
    return Codebook(centroids=centroids,
                    fit_metadata=FitMetadata(iterations, final_inertia, seed))


def assign(features: np.ndarray, codebook: Codebook, resolution_ms: int = 20,
           source_id: str = "") -> UnitSequence:
    """Nearest centroid per frame (squared Euclidean; ties go to the lowest id)."""
    pts = np.asarray(features, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != codebook.dim:
        raise ShapeError(
            f"features shape {pts.shape} does not match codebook dim {codebook.dim}")
    labels = _sq_distances(pts, codebook.centroids).argmin(axis=1)
    return UnitSequence(tuple(int(u) for u in labels), resolution_ms, source_id)


def inertia_of(features: np.ndarray, codebook: Codebook) -> float:
    pts = np.asarray(features, dtype=np.float64)
    return float(_sq_distances(pts, codebook.centroids).min(axis=1).sum())


def subsample_units(units: UnitSequence, factor: int) -> UnitSequence:
    """Keep every factor-th unit; resolution scales by the same factor."""
    if factor < 1:
        raise ShapeError(f"subsample factor must be >= 1, got {factor}")
    kept = units.units[::factor]
    return UnitSequence(kept, units.resolution_ms * factor, units.source_id)


# ---------------------------------------------------------------------------
# File formats


def write_codebook(path: str, codebook: Codebook) -> None:
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(struct.pack("<IIIi", CODEBOOK_VERSION, codebook.k, codebook.dim,
                             codebook.fit_metadata.seed))
        fh.write(struct.pack("<Id", codebook.fit_metadata.iterations,
                             codebook.fit_metadata.final_inertia))
        fh.write(codebook.centroids.astype("<f8").tobytes())


def read_codebook(path: str) -> Codebook:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CODEBOOK_MAGIC:
            raise FormatError(f"{path}: not a codebook file (magic {magic!r})")
        version, k, dim, seed = struct.unpack("<IIIi", fh.read(16))
        if version != CODEBOOK_VERSION:
            raise FormatError(f"{path}: unsupported codebook version {version}")
        iterations, inertia = struct.unpack("<Id", fh.read(12))
        payload = fh.read(k * dim * 8)
        if len(payload) != k * dim * 8:
            raise FormatError(f"{path}: truncated codebook payload")
        centroids = np.frombuffer(payload, dtype="<f8").reshape(k, dim).copy()
    return Codebook(centroids=centroids, fit_metadata=FitMetadata(iterations, inertia, seed))


def write_unit_file(path: str, sequences: list[UnitSequence]) -> None:
    """One utterance per line, space-separated decimal unit ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(" ".join(str(u) for u in seq.units) + "\n")


def read_unit_file(path: str, resolution_ms: int) -> list[UnitSequence]:
    out: list[UnitSequence] = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            toks = line.split()
            out.append(UnitSequence(tuple(int(t) for t in toks), resolution_ms, str(i)))
    return out


def write_units_manifest(path: str, utt_ids: list[str], audio_paths: list[str]) -> None:
    """Sidecar mapping unit-file line numbers to utterances."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("line\tutt_id\taudio_path\n")
        for i, (utt, ap) in enumerate(zip(utt_ids, audio_paths)):
            fh.write(f"{i}\t{utt}\t{ap}\n")
