"""
Visual codebook: k-means training, exact nearest-word assignment and residuals.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from sklearn.cluster import kmeans_plusplus

from app.core.exceptions import CodebookError
from app.services.kernel import QuantizedSet

logger = logging.getLogger(__name__)

# rows of the approximate distance matrix held in memory at once
_CHUNK_ELEMENTS = 1 << 22
# relative slack on BLAS distances before the exact re-check
_CANDIDATE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    seed: int = 0
    objective_history: Tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] < 1 or centroids.shape[1] < 1:
            raise CodebookError(f"centroids must be a non-empty kappa x d matrix, got shape {centroids.shape}")
        if not np.all(np.isfinite(centroids)):
            raise CodebookError("centroids must be finite")
        object.__setattr__(self, "centroids", centroids)

    @property
    def kappa(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True, eq=False)
class Assignment:
    word_ids: np.ndarray
    distances: np.ndarray


def _check_vectors(codebook: Codebook, vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != codebook.dim:
        raise CodebookError(f"expected {codebook.dim}-dimensional vectors, got {vectors.shape[-1]}")
    return vectors


def _check_multiplicity(codebook: Codebook, multiplicity: int) -> None:
    if not 1 <= multiplicity <= codebook.kappa:
        raise CodebookError(f"multiplicity must lie in [1, {codebook.kappa}], got {multiplicity}")


def assign(codebook: Codebook, x, multiplicity: int = 1) -> Assignment:
    """Exhaustive scan; ties go to the lower word index."""
    _check_multiplicity(codebook, multiplicity)
    x = _check_vectors(codebook, x).ravel()
    distances = ((codebook.centroids - x) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(codebook.kappa), distances))[:multiplicity]
    return Assignment(order, distances[order])


def assign_batch(codebook: Codebook, vectors, multiplicity: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest words for every row, identical to calling `assign` row by row.

    Candidates are filtered with the BLAS expansion |x|^2 - 2 x.c + |c|^2 and a
    slack band around the multiplicity-th smallest value; survivors are
    re-scored exactly, so the result never depends on the expansion's rounding.

    Returns:
        tuple: (n x multiplicity word ids, n x multiplicity squared distances)
    """
    _check_multiplicity(codebook, multiplicity)
    vectors = np.atleast_2d(_check_vectors(codebook, vectors))
    n = vectors.shape[0]
    centroids = codebook.centroids
    centroid_norms = (centroids ** 2).sum(axis=1)
    word_ids = np.empty((n, multiplicity), dtype=np.int64)
    distances = np.empty((n, multiplicity), dtype=np.float64)
    chunk = max(1, _CHUNK_ELEMENTS // codebook.kappa)

    for start in range(0, n, chunk):
        block = vectors[start:start + chunk]
        block_norms = (block ** 2).sum(axis=1)
        approx = block_norms[:, None] - 2.0 * block @ centroids.T + centroid_norms[None, :]
        kth = np.partition(approx, multiplicity - 1, axis=1)[:, multiplicity - 1]
        slack = _CANDIDATE_SLACK * (block_norms + centroid_norms.max()) + 1e-300
        mask = approx <= (kth + slack)[:, None]
        counts = mask.sum(axis=1)

        simple = np.flatnonzero(counts == multiplicity)
        if simple.shape[0]:
            candidates = np.nonzero(mask[simple])[1].reshape(-1, multiplicity)
            exact = ((centroids[candidates] - block[simple][:, None, :]) ** 2).sum(axis=-1)
            order = np.lexsort((candidates, exact), axis=-1)
            word_ids[start + simple] = np.take_along_axis(candidates, order, axis=1)
            distances[start + simple] = np.take_along_axis(exact, order, axis=1)

        for row in np.flatnonzero(counts != multiplicity):
            candidates = np.flatnonzero(mask[row])
            exact = ((centroids[candidates] - block[row]) ** 2).sum(axis=1)
            order = np.lexsort((candidates, exact))[:multiplicity]
            word_ids[start + row] = candidates[order]
            distances[start + row] = exact[order]

    return word_ids, distances


def residual(codebook: Codebook, x, word: int) -> np.ndarray:
    if not 0 <= word < codebook.kappa:
        raise CodebookError(f"word {word} out of range [0, {codebook.kappa})")
    return _check_vectors(codebook, x).ravel() - codebook.centroids[word]


def quantize(codebook: Codebook, vectors, multiplicity: int = 1, image_id: Optional[int] = None) -> QuantizedSet:
    """Expand each descriptor into `multiplicity` (word, residual) elements."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.size == 0:
        _check_multiplicity(codebook, multiplicity)
        return QuantizedSet(np.zeros(0, np.int64), np.zeros((0, codebook.dim)), np.zeros(0, np.int64),
                            multiplicity, image_id)
    word_ids, _ = assign_batch(codebook, vectors, multiplicity)
    source = np.repeat(np.arange(vectors.shape[0]), multiplicity)
    words = word_ids.ravel()
    residuals = vectors[source] - codebook.centroids[words]
    return QuantizedSet(words, residuals, source, multiplicity, image_id)


def _update_centroids(sample: np.ndarray, labels: np.ndarray, distances: np.ndarray,
                      centroids: np.ndarray) -> np.ndarray:
    kappa = centroids.shape[0]
    counts = np.bincount(labels, minlength=kappa)
    order = np.argsort(labels, kind="stable")
    populated = np.flatnonzero(counts)
    starts = np.concatenate(([0], np.cumsum(counts[populated])[:-1]))
    sums = np.add.reduceat(sample[order], starts, axis=0)

    updated = centroids.copy()
    updated[populated] = sums / counts[populated, None]

    empty = np.flatnonzero(counts == 0)
    if empty.shape[0]:
        farthest = np.lexsort((np.arange(sample.shape[0]), -distances))
        updated[empty] = sample[farthest[:empty.shape[0]]]
        logger.debug(f"Re-seeded {empty.shape[0]} empty clusters from the farthest points")
    return updated


def train_codebook(sample, kappa: int, iters: int = 25, seed: int = 0) -> Codebook:
    """
    Lloyd's k-means with k-means++ seeding.

    Args:
        sample: N x d training descriptors, N >= kappa
        kappa (int): Number of visual words
        iters (int): Maximum number of iterations
        seed (int): Seed for the k-means++ initialization, 0 <= seed < 2**64

    Returns:
        Codebook: Trained codebook carrying the per-iteration objective
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2:
        raise CodebookError(f"training sample must be a 2-D array, got shape {sample.shape}")
    if kappa < 1:
        raise CodebookError(f"kappa must be positive, got {kappa}")
    if sample.shape[0] < kappa:
        raise CodebookError(f"training sample has {sample.shape[0]} vectors, fewer than kappa={kappa}")
    if iters < 1:
        raise CodebookError(f"iters must be positive, got {iters}")
    if seed < 0:
        raise CodebookError(f"seed must be non-negative, got {seed}")

    # scikit-learn only takes 32-bit integer seeds; MT19937 accepts any non-negative seed
    random_state = np.random.RandomState(np.random.MT19937(seed))
    centroids, _ = kmeans_plusplus(sample, n_clusters=kappa, random_state=random_state)
    centroids = np.array(centroids, dtype=np.float64)
    labels = None
    history = []
    for iteration in range(iters):
        word_ids, distances = assign_batch(Codebook(centroids, seed), sample, 1)
        new_labels, distances = word_ids[:, 0], distances[:, 0]
        history.append(float(distances.sum()))
        logger.debug(f"k-means iteration {iteration + 1}: objective {history[-1]:.6g}")
        if labels is not None and np.array_equal(labels, new_labels):
            logger.info(f"k-means converged after {iteration + 1} iterations")
            break
        labels = new_labels
        centroids = _update_centroids(sample, labels, distances, centroids)

    logger.info(f"Trained codebook: kappa={kappa}, d={sample.shape[1]}, samples={sample.shape[0]}, "
                f"objective={history[-1]:.6g}")
    return Codebook(centroids, seed, tuple(history))
