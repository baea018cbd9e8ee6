"""
Inverted file over aggregated image records.

Posting lists keep image ids as gaps (the first entry is the raw id) and are
varint-coded on disk. Scoring traverses the lists of the query's words and
accumulates selectivities into a dense per-image array.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import InvertedIndexError
from app.core.models import KernelParams
from app.services.codebook import Codebook, quantize
from app.services.features import GlobalDescriptor
from app.services.kernel import (
    AggregatedImageRecord,
    QuantizedSet,
    binarize_set,
    build_record,
    hamming,
    selectivity_from_hamming,
    smk_between,
)

logger = logging.getLogger(__name__)


def encode_varints(values) -> bytes:
    """Unsigned LEB128: 7 payload bits per byte, high bit set on all but the last byte."""
    out = bytearray()
    for value in np.asarray(values, dtype=np.uint64).tolist():
        while value >= 0x80:
            out.append((value & 0x7F) | 0x80)
            value >>= 7
        out.append(value)
    return bytes(out)


def decode_varints(buffer, count: int, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Decode `count` varints starting at `offset`.

    Returns:
        tuple: (uint64 values, offset just past the last decoded byte)
    """
    if count == 0:
        return np.zeros(0, dtype=np.uint64), offset
    available = len(buffer) - offset
    if available <= 0:
        raise InvertedIndexError(f"varint stream is empty, expected {count} values")
    window = np.frombuffer(buffer, dtype=np.uint8, count=min(available, count * 10), offset=offset)
    ends = np.flatnonzero(window < 0x80)
    if ends.shape[0] < count:
        raise InvertedIndexError(f"varint stream ended after {ends.shape[0]} of {count} values")
    ends = ends[:count]
    stop = int(ends[-1]) + 1
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > 10:
        raise InvertedIndexError("varint longer than 10 bytes")
    payload = window[:stop].astype(np.uint64) & np.uint64(0x7F)
    shifts = (np.arange(stop) - np.repeat(starts, lengths)).astype(np.uint64) * np.uint64(7)
    values = np.add.reduceat(payload << shifts, starts)
    return values.astype(np.uint64), offset + stop


@dataclass(frozen=True, eq=False)
class PostingList:
    word_id: int
    image_id_deltas: np.ndarray
    signatures: np.ndarray

    def __post_init__(self):
        deltas = np.asarray(self.image_id_deltas, dtype=np.uint64).ravel()
        if deltas.shape[0] != self.signatures.shape[0]:
            raise InvertedIndexError(
                f"posting list {self.word_id}: {deltas.shape[0]} ids but {self.signatures.shape[0]} signatures"
            )
        if deltas.shape[0] > 1 and np.any(deltas[1:] == 0):
            raise InvertedIndexError(f"posting list {self.word_id}: image ids are not strictly ascending")
        object.__setattr__(self, "image_id_deltas", deltas)

    @classmethod
    def from_image_ids(cls, word_id: int, image_ids: np.ndarray, signatures: np.ndarray) -> "PostingList":
        image_ids = np.asarray(image_ids, dtype=np.uint64)
        deltas = np.diff(image_ids, prepend=np.uint64(0)) if image_ids.shape[0] else image_ids
        return cls(word_id, deltas, signatures)

    def __len__(self) -> int:
        return self.image_id_deltas.shape[0]

    @property
    def image_ids(self) -> np.ndarray:
        return np.cumsum(self.image_id_deltas, dtype=np.uint64)

    def encoded_ids(self) -> bytes:
        return encode_varints(self.image_id_deltas)


@dataclass(frozen=True, eq=False)
class InvertedIndex:
    """
    Database side of the kernel.

    image_ids is sorted; gammas and names are aligned with it. Images whose
    record was empty keep a gamma of 0 and appear in no posting list.
    """
    params: KernelParams
    kappa: int
    postings: Dict[int, PostingList]
    image_ids: np.ndarray
    gammas: np.ndarray
    names: List[str]

    @property
    def image_count(self) -> int:
        return self.image_ids.shape[0]

    def slots(self, image_ids: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.image_ids, image_ids.astype(np.int64))

    def unknown_ids(self, image_ids: np.ndarray) -> np.ndarray:
        """Ids in `image_ids` that have no entry in the gamma table."""
        image_ids = np.asarray(image_ids).astype(np.int64)
        return image_ids[~np.isin(image_ids, self.image_ids)]

    def name_of(self, image_id: int) -> str:
        return self.names[int(self.slots(np.asarray([image_id]))[0])]


@dataclass(frozen=True)
class SearchResult:
    ranking: List[Tuple[int, float]]
    hamming_comparisons: int = 0


@dataclass(frozen=True)
class IndexStats:
    image_count: int
    mean_words_per_image: float
    total_signatures: int
    bytes: int
    nonempty_words: int
    empty_images: int = 0


def build_index(records: Sequence[AggregatedImageRecord], params: KernelParams, kappa: int,
                names: Optional[Sequence[str]] = None) -> InvertedIndex:
    """
    Build posting lists from aggregated records.

    Args:
        records: Records built against one codebook, integer image ids
        params (KernelParams): Kernel parameters stored with the index
        kappa (int): Codebook size
        names: Optional display name per record (defaults to the id)
    """
    if names is not None and len(names) != len(records):
        raise InvertedIndexError(f"{len(names)} names for {len(records)} records")
    ids = [record.image_id for record in records]
    if any(image_id is None or int(image_id) < 0 for image_id in ids):
        raise InvertedIndexError("every record needs a non-negative integer image id")
    ids = np.asarray(ids, dtype=np.int64)
    unique, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise InvertedIndexError(f"duplicate image id {int(unique[np.argmax(counts > 1)])}")

    n_bytes = params.n_bytes
    word_parts, image_parts, signature_parts = [], [], []
    for record in records:
        if len(record) == 0:
            continue
        if record.dim != params.d:
            raise InvertedIndexError(f"record {record.image_id} has dimension {record.dim}, index expects {params.d}")
        if record.word_ids[-1] >= kappa:
            raise InvertedIndexError(f"record {record.image_id} uses word {record.word_ids[-1]} >= kappa={kappa}")
        word_parts.append(record.word_ids)
        image_parts.append(np.full(len(record), record.image_id, dtype=np.int64))
        signature_parts.append(record.signatures)

    postings: Dict[int, PostingList] = {}
    if word_parts:
        words = np.concatenate(word_parts)
        images = np.concatenate(image_parts)
        signatures = np.vstack(signature_parts)
        order = np.lexsort((images, words))
        words, images, signatures = words[order], images[order], signatures[order]
        unique_words, starts = np.unique(words, return_index=True)
        stops = np.append(starts[1:], words.shape[0])
        for word, start, stop in zip(unique_words.tolist(), starts, stops):
            postings[word] = PostingList.from_image_ids(word, images[start:stop], signatures[start:stop])

    by_id = np.argsort(ids, kind="stable")
    gammas = np.asarray([records[i].gamma or 0.0 for i in by_id], dtype=np.float64)
    labels = [str(names[i]) if names is not None else str(records[i].image_id) for i in by_id]
    index = InvertedIndex(params, kappa, postings, ids[by_id], gammas, labels)
    logger.info(f"Built inverted index: {index.image_count} images, {len(postings)} non-empty words, "
                f"{sum(len(pl) for pl in postings.values())} signatures (n_bytes={n_bytes})")
    return index


def build_query_record(codebook: Codebook, vectors, ma: int, image_id: Optional[int] = None) -> AggregatedImageRecord:
    """Query-side record: every descriptor contributes its residual to each of its ma words."""
    return build_record(quantize(codebook, vectors, ma, image_id), codebook.kappa, image_id)


def score_all(index: InvertedIndex, query: AggregatedImageRecord) -> Tuple[np.ndarray, int]:
    """
    Accumulate kernel values over the posting lists of the query's words.

    Returns:
        tuple: (score per image aligned with index.image_ids, hamming comparisons made)

    Images with an empty record have gamma 0 and always score 0.
    """
    accumulator = np.zeros(index.image_count, dtype=np.float64)
    if query.is_empty:
        return accumulator, 0
    if query.dim != index.params.d:
        raise InvertedIndexError(f"query dimension {query.dim} does not match index dimension {index.params.d}")
    comparisons = 0
    for word, signature in zip(query.word_ids.tolist(), query.signatures):
        posting = index.postings.get(word)
        if posting is None:
            continue
        values = selectivity_from_hamming(hamming(posting.signatures, signature[None, :]), query.dim, index.params)
        accumulator[index.slots(posting.image_ids)] += values
        comparisons += len(posting)
    return accumulator * query.gamma * index.gammas, comparisons


def _rank(image_ids: np.ndarray, scores: np.ndarray, top_k: int) -> List[Tuple[int, float]]:
    positive = np.flatnonzero(scores > 0)
    order = positive[np.lexsort((image_ids[positive], -scores[positive]))]
    if top_k > 0:
        order = order[:top_k]
    return [(int(image_ids[i]), float(scores[i])) for i in order]


def search_record(index: InvertedIndex, query: AggregatedImageRecord, top_k: int = 0) -> SearchResult:
    if top_k < 0:
        raise InvertedIndexError(f"top_k must be non-negative, got {top_k}")
    scores, comparisons = score_all(index, query)
    ranking = _rank(index.image_ids, scores, top_k)
    logger.debug(f"Query {query.image_id}: {len(ranking)} images scored, {comparisons} hamming comparisons")
    return SearchResult(ranking, comparisons)


def search(index: InvertedIndex, query: QuantizedSet, ma: int, top_k: int = 0) -> SearchResult:
    """
    Score a quantized query against every database image.

    Args:
        index (InvertedIndex): Database index
        query (QuantizedSet): Query quantized with multiplicity `ma`
        ma (int): Multiple assignment factor used for the query
        top_k (int): Number of results, 0 for all
    """
    if ma < 1:
        raise InvertedIndexError(f"multiple assignment factor must be positive, got {ma}")
    if query.multiplicity != ma:
        raise InvertedIndexError(f"query was quantized with multiplicity {query.multiplicity}, expected {ma}")
    return search_record(index, build_record(query, index.kappa), top_k)


def smk_search(database: Sequence[QuantizedSet], query: QuantizedSet, params: KernelParams,
               top_k: int = 0) -> SearchResult:
    """Exhaustive non-aggregated scoring of a query against every database set."""
    query_set = binarize_set(query, params)
    image_ids = np.asarray([item.image_id for item in database], dtype=np.int64)
    scores = np.asarray([smk_between(query_set, binarize_set(item, params), params) for item in database],
                        dtype=np.float64)
    return SearchResult(_rank(image_ids, scores, top_k), 0)


def rank_global(query: GlobalDescriptor, database: Sequence[Tuple[int, GlobalDescriptor]],
                top_k: int = 0) -> SearchResult:
    """Nearest neighbours of a global descriptor by inner product."""
    if not database:
        return SearchResult([], 0)
    image_ids = np.asarray([image_id for image_id, _ in database], dtype=np.int64)
    matrix = np.vstack([descriptor.vector for _, descriptor in database])
    if matrix.shape[1] != query.vector.shape[0]:
        raise InvertedIndexError(f"global descriptor dimensions differ: {query.vector.shape[0]} vs {matrix.shape[1]}")
    scores = matrix @ query.vector
    order = np.lexsort((image_ids, -scores))
    if top_k > 0:
        order = order[:top_k]
    return SearchResult([(int(image_ids[i]), float(scores[i])) for i in order], 0)


def index_stats(index: InvertedIndex) -> IndexStats:
    """
    Memory footprint: packed signatures plus varint-coded id gaps.

    The mean word count is taken over images with a non-empty record; images
    with gamma 0 are reported separately as empty_images.
    """
    total = sum(len(posting) for posting in index.postings.values())
    size = sum(len(posting.encoded_ids()) + posting.signatures.nbytes for posting in index.postings.values())
    empty = int(np.count_nonzero(index.gammas == 0.0))
    indexed = index.image_count - empty
    mean = total / indexed if indexed else 0.0
    return IndexStats(index.image_count, mean, total, size, len(index.postings), empty)
