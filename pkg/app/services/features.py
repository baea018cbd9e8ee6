"""
Local descriptor post-processing for dense activation maps.

A dense map is turned into weighted, whitened local descriptors: the strength of
each location is the l2 norm of its raw activation vector, the descriptor is the
whitened, dimension-reduced vector of the locally smoothed map at that location.
The pooled (global) versions of the same kernels are provided for cross-checks.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.ndimage import uniform_filter

from app.core.exceptions import FeatureMapError, WhiteningError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DenseFeatureMap:
    """Activation tensor stored as (height, width, depth), row-major (y, x, channel)."""
    data: np.ndarray
    scale_factor: float = 1.0
    allow_negative: bool = field(default=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or 0 in data.shape:
            raise FeatureMapError(f"feature map must be a non-empty H x W x D tensor, got shape {data.shape}")
        if not self.scale_factor > 0:
            raise FeatureMapError(f"scale factor must be positive, got {self.scale_factor}")
        if not np.all(np.isfinite(data)):
            raise FeatureMapError("feature map contains non-finite activations")
        if not self.allow_negative and np.any(data < 0):
            raise FeatureMapError("feature map contains negative activations (use allow_negative to override)")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_flat(cls, width: int, height: int, depth: int, values, scale_factor: float = 1.0,
                  allow_negative: bool = False) -> "DenseFeatureMap":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height * depth:
            raise FeatureMapError(
                f"expected {width * height * depth} activations for {width}x{height}x{depth}, got {values.size}"
            )
        return cls(values.reshape(height, width, depth), scale_factor, allow_negative)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    def vectors(self) -> np.ndarray:
        """Location vectors in row-major (y, x) order."""
        return self.data.reshape(-1, self.depth)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """o(u) = P (u - m) with P of shape (d, D)."""
    projection: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        projection = np.atleast_2d(np.asarray(self.projection, dtype=np.float64))
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        if projection.shape[1] != mean.shape[0]:
            raise WhiteningError(f"projection has {projection.shape[1]} columns but mean has {mean.shape[0]} entries")
        if projection.shape[0] > projection.shape[1]:
            raise WhiteningError(f"output dim {projection.shape[0]} exceeds input dim {projection.shape[1]}")
        object.__setattr__(self, "projection", projection)
        object.__setattr__(self, "mean", mean)

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]


@dataclass(frozen=True)
class WeightedDescriptor:
    vector: np.ndarray
    strength: float
    source_scale: float
    grid_x: int
    grid_y: int


@dataclass(frozen=True, eq=False)
class LocalDescriptorSet:
    """Column-wise storage of an image's descriptors and their provenance."""
    vectors: np.ndarray
    strengths: np.ndarray
    scales: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    image_id: Optional[str] = None

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            vectors = vectors.reshape(len(self.strengths), -1)
        n = vectors.shape[0]
        columns = {
            "strengths": np.asarray(self.strengths, dtype=np.float64).ravel(),
            "scales": np.asarray(self.scales, dtype=np.float64).ravel(),
            "grid_x": np.asarray(self.grid_x, dtype=np.int64).ravel(),
            "grid_y": np.asarray(self.grid_y, dtype=np.int64).ravel(),
        }
        for name, column in columns.items():
            if column.shape[0] != n:
                raise FeatureMapError(f"{name} has {column.shape[0]} entries for {n} descriptors")
            object.__setattr__(self, name, column)
        if np.any(columns["strengths"] < 0):
            raise FeatureMapError("descriptor strengths must be non-negative")
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def empty(cls, dim: int = 0, image_id: Optional[str] = None) -> "LocalDescriptorSet":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), image_id)

    @classmethod
    def from_descriptors(cls, descriptors: Sequence[WeightedDescriptor], image_id: Optional[str] = None,
                         dim: int = 0) -> "LocalDescriptorSet":
        if not descriptors:
            return cls.empty(dim, image_id)
        return cls(
            vectors=np.vstack([np.asarray(item.vector, dtype=np.float64) for item in descriptors]),
            strengths=[item.strength for item in descriptors],
            scales=[item.source_scale for item in descriptors],
            grid_x=[item.grid_x for item in descriptors],
            grid_y=[item.grid_y for item in descriptors],
            image_id=image_id,
        )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __iter__(self) -> Iterator[WeightedDescriptor]:
        return iter(self.descriptors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def descriptors(self) -> List[WeightedDescriptor]:
        return [
            WeightedDescriptor(self.vectors[i], float(self.strengths[i]), float(self.scales[i]),
                               int(self.grid_x[i]), int(self.grid_y[i]))
            for i in range(len(self))
        ]

    def take(self, order: np.ndarray, image_id: Optional[str] = None) -> "LocalDescriptorSet":
        return LocalDescriptorSet(
            self.vectors[order], self.strengths[order], self.scales[order],
            self.grid_x[order], self.grid_y[order], image_id if image_id is not None else self.image_id,
        )

    def with_image_id(self, image_id: str) -> "LocalDescriptorSet":
        return LocalDescriptorSet(self.vectors, self.strengths, self.scales, self.grid_x, self.grid_y, image_id)


@dataclass(frozen=True, eq=False)
class GlobalDescriptor:
    vector: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("spoc", "how"):
            raise FeatureMapError(f"unknown global descriptor kind: {self.kind}")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64).ravel())


def attention_map(feature_map: DenseFeatureMap) -> np.ndarray:
    """Per-location l2 norm over channels, shape (H, W)."""
    return np.linalg.norm(feature_map.data, axis=2)


def local_smooth(feature_map: DenseFeatureMap, window: int) -> DenseFeatureMap:
    """
    Average pooling over a window x window neighbourhood, counting only in-bounds cells.

    Args:
        feature_map (DenseFeatureMap): Map to smooth
        window (int): Odd window size M

    Returns:
        DenseFeatureMap: Map of identical shape
    """
    if window < 1 or window % 2 == 0:
        raise FeatureMapError(f"smoothing window must be a positive odd number, got {window}")
    data = feature_map.data
    if window == 1:
        return DenseFeatureMap(data.copy(), feature_map.scale_factor, feature_map.allow_negative)

    size = (window, window, 1)
    sums = uniform_filter(data, size=size, mode="constant", cval=0.0)
    counts = uniform_filter(np.ones(data.shape[:2] + (1,)), size=size, mode="constant", cval=0.0)
    smoothed = sums / counts
    # the running-sum filter can drift by an ulp outside the per-channel input range
    smoothed = np.clip(smoothed, data.min(axis=(0, 1)), data.max(axis=(0, 1)))
    return DenseFeatureMap(smoothed, feature_map.scale_factor, feature_map.allow_negative)


def fit_whitening(sample, d: int, eps: Optional[float] = None) -> WhiteningTransform:
    """
    Fit PCA whitening with joint dimensionality reduction.

    Args:
        sample: N x D descriptors, N > D
        d (int): Output dimension, d <= D
        eps (float): Eigenvalue regularizer; defaults to 1e-6 * trace(cov) / D

    Returns:
        WhiteningTransform: P = diag((lambda + eps)^-1/2) V_d^T and the sample mean
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2:
        raise WhiteningError(f"whitening sample must be a 2-D array, got shape {sample.shape}")
    n, dim = sample.shape
    if n <= dim:
        raise WhiteningError(f"whitening sample needs more than {dim} vectors, got {n}")
    if not 1 <= d <= dim:
        raise WhiteningError(f"target dimension must be within [1, {dim}], got {d}")

    mean = sample.mean(axis=0)
    centered = sample - mean
    rank = int(np.linalg.matrix_rank(centered))
    if rank < d:
        raise WhiteningError(f"whitening sample is rank deficient: rank {rank} < target dimension {d}")

    covariance = centered.T @ centered / n
    eigvals, eigvecs = linalg.eigh(covariance)
    order = np.argsort(-eigvals, kind="stable")[:d]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    # largest-magnitude entry of every principal direction is positive
    pivots = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[pivots, np.arange(d)])
    eigvecs = eigvecs * np.where(signs == 0, 1.0, signs)

    if eps is None:
        eps = 1e-6 * float(np.trace(covariance)) / dim
    if eps < 0:
        raise WhiteningError(f"eps must be non-negative, got {eps}")
    projection = eigvecs.T / np.sqrt(eigvals + eps)[:, None]
    logger.info(f"Fitted whitening {dim} -> {d} on {n} vectors (eps={eps:.3g}, top eigenvalue={eigvals[0]:.4g})")
    return WhiteningTransform(projection, mean)


def identity_whitening(dim: int) -> WhiteningTransform:
    """No mean subtraction and no whitening."""
    return WhiteningTransform(np.eye(dim), np.zeros(dim))


def apply_whitening(transform: WhiteningTransform, vectors) -> np.ndarray:
    """P (u - m) for one D-vector or for each row of an n x D array."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != transform.input_dim:
        raise WhiteningError(f"expected {transform.input_dim}-dimensional input, got {vectors.shape[-1]}")
    return (vectors - transform.mean) @ transform.projection.T


def extract_single_scale(feature_map: DenseFeatureMap, transform: WhiteningTransform,
                         window: int) -> LocalDescriptorSet:
    """One descriptor per grid location: raw-map strength, smoothed-map whitened vector."""
    if feature_map.depth != transform.input_dim:
        raise FeatureMapError(
            f"feature map depth {feature_map.depth} does not match whitening input {transform.input_dim}"
        )
    strengths = attention_map(feature_map).ravel()
    vectors = apply_whitening(transform, local_smooth(feature_map, window).vectors())
    grid_y, grid_x = np.divmod(np.arange(feature_map.height * feature_map.width), feature_map.width)
    scales = np.full(strengths.shape[0], feature_map.scale_factor)
    return LocalDescriptorSet(vectors, strengths, scales, grid_x, grid_y)


def merge_multiscale(per_scale: Sequence[LocalDescriptorSet], n: int,
                     image_id: Optional[str] = None) -> LocalDescriptorSet:
    """
    Rank the union of all scales by strength and keep the n strongest.

    Ties are broken by scale, then grid row, then grid column, all ascending.
    """
    if n < 1:
        raise FeatureMapError(f"number of kept descriptors must be positive, got {n}")
    parts = [part for part in per_scale if len(part)]
    if not parts:
        dim = per_scale[0].dim if per_scale else 0
        return LocalDescriptorSet.empty(dim, image_id)
    dims = {part.dim for part in parts}
    if len(dims) != 1:
        raise FeatureMapError(f"cannot merge descriptors of different dimensions: {sorted(dims)}")

    merged = LocalDescriptorSet(
        np.vstack([part.vectors for part in parts]),
        np.concatenate([part.strengths for part in parts]),
        np.concatenate([part.scales for part in parts]),
        np.concatenate([part.grid_x for part in parts]),
        np.concatenate([part.grid_y for part in parts]),
    )
    order = np.lexsort((merged.grid_x, merged.grid_y, merged.scales, -merged.strengths))[:n]
    return merged.take(order, image_id)


def extract_multiscale(maps: Sequence[DenseFeatureMap], transform: WhiteningTransform, window: int, n: int,
                       image_id: Optional[str] = None, workers: int = 1) -> LocalDescriptorSet:
    """Test-time extraction: every scale, merged and cut to the n strongest."""
    if workers > 1 and len(maps) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_scale = list(executor.map(lambda fmap: extract_single_scale(fmap, transform, window), maps))
    else:
        per_scale = [extract_single_scale(fmap, transform, window) for fmap in maps]
    merged = merge_multiscale(per_scale, n, image_id)
    logger.debug(f"Extracted {len(merged)} descriptors for image {image_id} from {len(maps)} scales")
    return merged


def _unit(vector: np.ndarray, kind: str) -> GlobalDescriptor:
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise FeatureMapError(f"cannot normalize an all-zero {kind} aggregate")
    return GlobalDescriptor(vector / norm, kind)


def spoc_pool(feature_map: DenseFeatureMap) -> GlobalDescriptor:
    """Sum pooling of raw activations."""
    return _unit(feature_map.vectors().sum(axis=0), "spoc")


def how_pool(feature_map: DenseFeatureMap, transform: WhiteningTransform, window: int) -> GlobalDescriptor:
    """Strength-weighted sum of whitened smoothed descriptors."""
    descriptors = extract_single_scale(feature_map, transform, window)
    return _unit(descriptors.strengths @ descriptors.vectors, "how")


def multiscale_global(descriptors: Sequence[GlobalDescriptor]) -> GlobalDescriptor:
    """Sum of per-scale global descriptors, re-normalized."""
    if not descriptors:
        raise FeatureMapError("no global descriptors to combine")
    kinds = {item.kind for item in descriptors}
    if len(kinds) != 1:
        raise FeatureMapError(f"cannot combine global descriptors of kinds {sorted(kinds)}")
    return _unit(np.sum([item.vector for item in descriptors], axis=0), kinds.pop())
