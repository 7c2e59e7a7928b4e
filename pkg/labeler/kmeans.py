"""
k-means pseudo-labeling: k-means++ seeding, Lloyd iterations and
nearest-centroid assignment.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from core.errors import DimensionMismatchError, NotEnoughDataError
from labeler.labels import LabelSequence
from signal_frontend.dsp import FeatureSequence

logger = logging.getLogger("lab.labeler.kmeans")

_CODEBOOK_HEADER = struct.Struct("<II")
ASSIGN_CHUNK = 4096


@dataclass
class Codebook:
    centroids: np.ndarray
    distortions: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2:
            raise ValueError("centroids must be a C x D matrix")

    @property
    def num_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path: Union[str, Path]):
        payload = _CODEBOOK_HEADER.pack(self.num_clusters, self.dim)
        payload += np.ascontiguousarray(self.centroids, dtype="<f4").tobytes()
        Path(path).write_bytes(payload)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Codebook":
        payload = Path(path).read_bytes()
        num_clusters, dim = _CODEBOOK_HEADER.unpack_from(payload)
        expected = _CODEBOOK_HEADER.size + 4 * num_clusters * dim
        if len(payload) != expected:
            raise ValueError(f"{path}: codebook is {len(payload)} bytes, header implies {expected}")
        centroids = np.frombuffer(payload, dtype="<f4", offset=_CODEBOOK_HEADER.size)
        return cls(centroids.reshape(num_clusters, dim))


def _stack(features: Iterable[Union[FeatureSequence, np.ndarray]]) -> np.ndarray:
    mats = [f.frames if isinstance(f, FeatureSequence) else np.asarray(f) for f in features]
    if not mats:
        return np.zeros((0, 0))
    return np.vstack(mats).astype(np.float64)


def nearest_centroids(points: np.ndarray, centroids: np.ndarray, workers: int = 1):
    """(labels, squared distances); ties go to the lowest centroid index.

    Chunks are independent, so the result does not depend on `workers`."""
    if points.shape[1] != centroids.shape[1]:
        raise DimensionMismatchError(
            f"features have dimension {points.shape[1]}, centroids have {centroids.shape[1]}")

    def _chunk(start: int):
        d = cdist(points[start:start + ASSIGN_CHUNK], centroids, "sqeuclidean")
        idx = np.argmin(d, axis=1)
        return idx, d[np.arange(len(idx)), idx]

    starts = range(0, len(points), ASSIGN_CHUNK)
    if workers > 1 and len(points) > ASSIGN_CHUNK:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, starts))
    else:
        parts = [_chunk(s) for s in starts]
    if not parts:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def kmeans_plus_plus(points: np.ndarray, num_clusters: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((num_clusters, points.shape[1]))
    centroids[0] = points[rng.integers(len(points))]
    closest = cdist(points, centroids[:1], "sqeuclidean")[:, 0]
    for k in range(1, num_clusters):
        total = closest.sum()
        if total <= 0:
            raise NotEnoughDataError(f"not enough distinct frames for {num_clusters} clusters")
        pick = rng.choice(len(points), p=closest / total)
        centroids[k] = points[pick]
        closest = np.minimum(closest, cdist(points, centroids[k:k + 1], "sqeuclidean")[:, 0])
    return centroids


def _repair_empty(points: np.ndarray, centroids: np.ndarray, counts: np.ndarray,
                  dists: np.ndarray) -> int:
    """Reseed each empty centroid at the point farthest from its own centroid"""
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return 0
    order = np.argsort(-dists, kind="stable")
    used = set()
    cursor = 0
    for k in empty:
        while cursor < len(order) and order[cursor] in used:
            cursor += 1
        if cursor == len(order):
            break
        used.add(order[cursor])
        centroids[k] = points[order[cursor]]
        dists[order[cursor]] = 0.0
    return len(empty)


def kmeans_fit(features: Iterable[Union[FeatureSequence, np.ndarray]], num_clusters: int,
               iters: int, rng: np.random.Generator, workers: int = 1,
               max_frames: Optional[int] = None) -> Codebook:
    """Lloyd's algorithm from a k-means++ start.

    The returned codebook carries the distortion (mean squared distance)
    measured after every assignment step; the sequence never increases and
    its last entry is the distortion of the returned centroids."""
    points = _stack(features)
    if max_frames is not None and len(points) > max_frames:
        points = points[np.sort(rng.choice(len(points), max_frames, replace=False))]
    if len(points) < num_clusters:
        raise NotEnoughDataError(f"not enough data for {num_clusters} clusters ({len(points)} frames)")

    centroids = kmeans_plus_plus(points, num_clusters, rng)
    distortions = []
    assignment = None
    for iteration in range(max(iters, 1)):
        labels, dists = nearest_centroids(points, centroids, workers)
        distortions.append(float(dists.mean()))
        if assignment is not None and np.array_equal(labels, assignment):
            break
        assignment = labels

        counts = np.bincount(labels, minlength=num_clusters)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        repaired = _repair_empty(points, centroids, counts, dists)
        if repaired:
            logger.debug(f"⚠️ iteration {iteration}: reseeded {repaired} empty cluster(s)")
    else:
        # out of iterations: the last entry must describe the returned centroids
        _, dists = nearest_centroids(points, centroids, workers)
        distortions.append(float(dists.mean()))

    logger.info(f"✅ k-means C={num_clusters}: distortion {distortions[0]:.4f} -> {distortions[-1]:.4f} "
                f"in {len(distortions)} assignment steps")
    return Codebook(centroids, distortions)


def kmeans_assign(f: FeatureSequence, cb: Codebook, workers: int = 1) -> LabelSequence:
    labels, _ = nearest_centroids(np.asarray(f.frames, dtype=np.float64), cb.centroids, workers)
    return LabelSequence(labels, f.frameshift_ms, cb.num_clusters)


def cluster_purity(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of frames whose cluster's majority ground-truth class matches theirs"""
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if len(predicted) == 0:
        return 0.0
    hits = 0
    for cluster in np.unique(predicted):
        hits += np.bincount(truth[predicted == cluster]).max()
    return hits / len(predicted)
