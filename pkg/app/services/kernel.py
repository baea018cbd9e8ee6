"""
Match kernel math: binary signatures, per-word aggregation, the selectivity
function and reference SMK / ASMK scoring.

Sums that end up in a score use math.fsum, which is exactly rounded and hence
independent of summation order; this keeps both scores exactly symmetric.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.core.exceptions import KernelError
from app.core.models import KernelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BinarySignature:
    """d values in {-1, +1} packed to bits, bit 1 meaning +1."""
    bits: np.ndarray
    dim: int

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        if bits.shape[0] != (self.dim + 7) // 8:
            raise KernelError(f"{bits.shape[0]} bytes cannot hold a {self.dim}-bit signature")
        object.__setattr__(self, "bits", bits)

    @property
    def values(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.dim).astype(np.int8) * 2 - 1

    def __eq__(self, other) -> bool:
        return isinstance(other, BinarySignature) and self.dim == other.dim and bytes(self.bits) == bytes(other.bits)

    def __hash__(self) -> int:
        return hash((self.dim, bytes(self.bits)))


@dataclass(frozen=True, eq=False)
class QuantizedSet:
    """
    Descriptors expanded to (word, residual) elements.

    A descriptor assigned to `multiplicity` words yields that many elements,
    each holding its residual with respect to the corresponding word.
    """
    words: np.ndarray
    residuals: np.ndarray
    source: np.ndarray
    multiplicity: int = 1
    image_id: Optional[int] = None

    def __post_init__(self):
        words = np.asarray(self.words, dtype=np.int64).ravel()
        residuals = np.asarray(self.residuals, dtype=np.float64)
        source = np.asarray(self.source, dtype=np.int64).ravel()
        if residuals.ndim != 2 or residuals.shape[0] != words.shape[0] or source.shape[0] != words.shape[0]:
            raise KernelError(
                f"inconsistent quantized set: {words.shape[0]} words, residuals {residuals.shape}, "
                f"{source.shape[0]} sources"
            )
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "residuals", residuals)
        object.__setattr__(self, "source", source)

    def __len__(self) -> int:
        return self.words.shape[0]

    @property
    def dim(self) -> int:
        return self.residuals.shape[1]


@dataclass(frozen=True, eq=False)
class AggregatedImageRecord:
    """One packed signature per distinct visual word; gamma is None for an empty record."""
    image_id: Optional[int]
    word_ids: np.ndarray
    signatures: np.ndarray
    dim: int
    gamma: Optional[float]

    def __post_init__(self):
        word_ids = np.asarray(self.word_ids, dtype=np.int64).ravel()
        signatures = np.asarray(self.signatures, dtype=np.uint8).reshape(word_ids.shape[0], (self.dim + 7) // 8)
        if word_ids.shape[0] > 1 and np.any(np.diff(word_ids) <= 0):
            raise KernelError("record word ids must be strictly ascending")
        object.__setattr__(self, "word_ids", word_ids)
        object.__setattr__(self, "signatures", signatures)

    def __len__(self) -> int:
        return self.word_ids.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.gamma is None

    @property
    def entries(self) -> List[Tuple[int, BinarySignature]]:
        return [(int(word), BinarySignature(sig, self.dim)) for word, sig in zip(self.word_ids, self.signatures)]


def pack_signs(vectors: np.ndarray) -> np.ndarray:
    """Row-wise sign packing with sign(0) = +1."""
    return np.packbits(np.asarray(vectors) >= 0, axis=-1)


def binarize(residual) -> BinarySignature:
    residual = np.asarray(residual, dtype=np.float64).ravel()
    return BinarySignature(pack_signs(residual), residual.shape[0])


def aggregate_word(residuals) -> BinarySignature:
    """Sign of the summed residuals of one word."""
    residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if residuals.shape[0] == 0 or residuals.size == 0:
        raise KernelError("cannot aggregate an empty list of residuals")
    return binarize(residuals.sum(axis=0))


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distance between packed signatures along the last axis."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def selectivity_from_hamming(distances, dim: int, params: KernelParams) -> np.ndarray:
    """s = (d - 2h) / d; s**alpha where s >= tau, else 0."""
    similarity = (dim - 2.0 * np.asarray(distances, dtype=np.float64)) / dim
    return np.where(similarity >= params.tau, np.power(np.clip(similarity, 0.0, None), params.alpha), 0.0)


def selectivity(sig_a: BinarySignature, sig_b: BinarySignature, params: KernelParams) -> float:
    if sig_a.dim != sig_b.dim:
        raise KernelError(f"signature length mismatch: {sig_a.dim} vs {sig_b.dim}")
    if sig_a.dim != params.d:
        raise KernelError(f"signature length {sig_a.dim} does not match kernel dimension {params.d}")
    return float(selectivity_from_hamming(hamming(sig_a.bits, sig_b.bits), sig_a.dim, params))


def build_record(quantized: QuantizedSet, cb_size: int, image_id: Optional[int] = None) -> AggregatedImageRecord:
    """
    Group elements by word and aggregate each group into one signature.

    Args:
        quantized (QuantizedSet): Elements to aggregate
        cb_size (int): Codebook size, bounds the word ids
        image_id (int): Overrides the set's own id

    Returns:
        AggregatedImageRecord: Entries sorted by word id, gamma = 1/sqrt(#words)
    """
    image_id = quantized.image_id if image_id is None else image_id
    dim = quantized.dim
    if len(quantized) == 0:
        return AggregatedImageRecord(image_id, np.zeros(0, np.int64), np.zeros((0, (dim + 7) // 8), np.uint8), dim, None)
    if quantized.words.min() < 0 or quantized.words.max() >= cb_size:
        raise KernelError(f"word ids must lie in [0, {cb_size}), got range "
                          f"[{quantized.words.min()}, {quantized.words.max()}]")

    order = np.argsort(quantized.words, kind="stable")
    words = quantized.words[order]
    unique_words, starts = np.unique(words, return_index=True)
    sums = np.add.reduceat(quantized.residuals[order], starts, axis=0)
    return AggregatedImageRecord(image_id, unique_words, pack_signs(sums), dim, 1.0 / math.sqrt(unique_words.shape[0]))


def asmk_score(record_a: AggregatedImageRecord, record_b: AggregatedImageRecord, params: KernelParams) -> float:
    """gamma(A) gamma(B) sum of selectivities over common words."""
    if record_a.is_empty or record_b.is_empty:
        return 0.0
    if record_a.dim != record_b.dim:
        raise KernelError(f"record dimensions differ: {record_a.dim} vs {record_b.dim}")
    _, index_a, index_b = np.intersect1d(record_a.word_ids, record_b.word_ids,
                                         assume_unique=True, return_indices=True)
    if index_a.shape[0] == 0:
        return 0.0
    values = selectivity_from_hamming(hamming(record_a.signatures[index_a], record_b.signatures[index_b]),
                                      record_a.dim, params)
    return record_a.gamma * record_b.gamma * math.fsum(values)


@dataclass(frozen=True, eq=False)
class BinarizedSet:
    """Per-element signatures sorted by word, with the SMK self-normalizer."""
    words: np.ndarray
    signatures: np.ndarray
    starts: np.ndarray
    unique_words: np.ndarray
    dim: int
    gamma: Optional[float]

    def group(self, position: int) -> np.ndarray:
        stop = self.starts[position + 1] if position + 1 < self.starts.shape[0] else self.words.shape[0]
        return self.signatures[self.starts[position]:stop]


def _block_values(sigs_a: np.ndarray, sigs_b: np.ndarray, dim: int, params: KernelParams) -> np.ndarray:
    distances = hamming(sigs_a[:, None, :], sigs_b[None, :, :])
    return selectivity_from_hamming(distances, dim, params).ravel()


def binarize_set(quantized: QuantizedSet, params: KernelParams) -> BinarizedSet:
    order = np.argsort(quantized.words, kind="stable")
    words = quantized.words[order]
    signatures = pack_signs(quantized.residuals[order])
    unique_words, starts = np.unique(words, return_index=True)
    partial = BinarizedSet(words, signatures, starts, unique_words, quantized.dim, None)
    if words.shape[0] == 0:
        return partial
    values = [_block_values(partial.group(i), partial.group(i), quantized.dim, params) for i in range(len(starts))]
    self_similarity = math.fsum(np.concatenate(values))
    gamma = 1.0 / math.sqrt(self_similarity)
    return BinarizedSet(words, signatures, starts, unique_words, quantized.dim, gamma)


def smk_gamma(quantized: QuantizedSet, params: KernelParams) -> Optional[float]:
    """SMK normalizer under the binarized kernel; None for an empty set."""
    return binarize_set(quantized, params).gamma


def smk_between(set_x: BinarizedSet, set_y: BinarizedSet, params: KernelParams) -> float:
    if set_x.gamma is None or set_y.gamma is None:
        return 0.0
    if set_x.dim != set_y.dim:
        raise KernelError(f"descriptor dimensions differ: {set_x.dim} vs {set_y.dim}")
    _, index_x, index_y = np.intersect1d(set_x.unique_words, set_y.unique_words,
                                         assume_unique=True, return_indices=True)
    if index_x.shape[0] == 0:
        return 0.0
    values = [_block_values(set_x.group(i), set_y.group(j), set_x.dim, params) for i, j in zip(index_x, index_y)]
    return set_x.gamma * set_y.gamma * math.fsum(np.concatenate(values))


def smk_score(set_x: QuantizedSet, set_y: QuantizedSet, params: KernelParams) -> float:
    """Cross-match per-element binarized residuals within common words."""
    return smk_between(binarize_set(set_x, params), binarize_set(set_y, params), params)
