"""
Artifact serialization.

Binary formats are little-endian with explicit magics; floats are IEEE-754 f32
except the index gamma table (f64). Files are written to a temporary file in the
target directory and renamed into place. Text formats (ground truth, rankings)
are tab separated.
"""
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import FormatError, InvertedIndexError, TruncatedError, VersionError
from app.core.models import KernelParams
from app.services.codebook import Codebook
from app.services.evaluation import ClassGroundTruth, QueryTruth, RetrievalGroundTruth
from app.services.features import DenseFeatureMap, LocalDescriptorSet, WhiteningTransform
from app.services.index import InvertedIndex, PostingList, decode_varints, encode_varints

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

FEATURE_MAP_MAGIC = b"DFMP"
WHITENING_MAGIC = b"WHIT"
CODEBOOK_MAGIC = b"CBOK"
DESCRIPTOR_SET_MAGIC = b"DSET"
INDEX_MAGIC = b"ASMK"

FEATURE_MAP_VERSION = 1
DESCRIPTOR_SET_VERSION = 1
INDEX_VERSION = 1

MAX_DESCRIPTORS = 1 << 24


def atomic_write(path: PathLike, payload: Union[bytes, str]) -> None:
    """Write to a temporary sibling file, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    handle, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(data)
            stream.flush()
            os.fsync(stream.fileno())
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise TruncatedError(f"{self.source}: needed {size} bytes at offset {self.offset}, "
                                 f"file has {len(self.data)}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def text(self, size: int) -> str:
        raw = self.take(size)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{self.source}: name at offset {self.offset - size} is not valid UTF-8") from e

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        item = np.dtype(dtype)
        if count == 0:
            return np.zeros(0, dtype=item)
        return np.frombuffer(self.take(item.itemsize * count), dtype=item, count=count)

    def magic(self, expected: bytes) -> None:
        found = self.take(len(expected))
        if found != expected:
            raise FormatError(f"{self.source}: expected magic {expected!r}, found {found!r}")

    def version(self, supported: int) -> None:
        (version,) = self.unpack("<I")
        if version != supported:
            raise VersionError(f"{self.source}: unsupported version {version} (supported: {supported})")

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(f"{self.source}: {len(self.data) - self.offset} trailing bytes")


def _read(path: PathLike) -> _Reader:
    return _Reader(Path(path).read_bytes(), str(path))


def _f32(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


# 特征图

def save_feature_map(feature_map: DenseFeatureMap, path: PathLike) -> None:
    header = FEATURE_MAP_MAGIC + struct.pack("<IIIIf", FEATURE_MAP_VERSION, feature_map.width,
                                             feature_map.height, feature_map.depth, feature_map.scale_factor)
    atomic_write(path, header + _f32(feature_map.data))


def load_feature_map(path: PathLike, allow_negative: bool = False) -> DenseFeatureMap:
    reader = _read(path)
    reader.magic(FEATURE_MAP_MAGIC)
    reader.version(FEATURE_MAP_VERSION)
    width, height, depth, scale = reader.unpack("<IIIf")
    values = reader.array("<f4", width * height * depth)
    reader.finish()
    return DenseFeatureMap.from_flat(width, height, depth, values.astype(np.float64), float(scale), allow_negative)


# 白化参数

def save_whitening(transform: WhiteningTransform, path: PathLike) -> None:
    header = WHITENING_MAGIC + struct.pack("<II", transform.input_dim, transform.output_dim)
    atomic_write(path, header + _f32(transform.mean) + _f32(transform.projection))


def load_whitening(path: PathLike) -> WhiteningTransform:
    reader = _read(path)
    reader.magic(WHITENING_MAGIC)
    input_dim, output_dim = reader.unpack("<II")
    mean = reader.array("<f4", input_dim).astype(np.float64)
    projection = reader.array("<f4", output_dim * input_dim).astype(np.float64).reshape(output_dim, input_dim)
    reader.finish()
    return WhiteningTransform(projection, mean)


# 码本

def save_codebook(codebook: Codebook, path: PathLike) -> None:
    header = CODEBOOK_MAGIC + struct.pack("<IIQ", codebook.kappa, codebook.dim, codebook.seed)
    atomic_write(path, header + _f32(codebook.centroids))


def load_codebook(path: PathLike) -> Codebook:
    reader = _read(path)
    reader.magic(CODEBOOK_MAGIC)
    kappa, dim, seed = reader.unpack("<IIQ")
    centroids = reader.array("<f4", kappa * dim).astype(np.float64).reshape(kappa, dim)
    reader.finish()
    return Codebook(centroids, seed)


# 局部描述子集合

def _descriptor_dtype(dim: int) -> np.dtype:
    return np.dtype([("strength", "<f4"), ("scale", "<f4"), ("grid_x", "<u4"), ("grid_y", "<u4"),
                     ("vector", "<f4", (dim,))])


def save_descriptor_set(descriptors: LocalDescriptorSet, path: PathLike) -> None:
    if len(descriptors) > MAX_DESCRIPTORS:
        raise FormatError(f"descriptor set of {len(descriptors)} exceeds the format limit of {MAX_DESCRIPTORS}")
    name = (descriptors.image_id or "").encode("utf-8")
    records = np.zeros(len(descriptors), dtype=_descriptor_dtype(descriptors.dim))
    records["strength"] = descriptors.strengths
    records["scale"] = descriptors.scales
    records["grid_x"] = descriptors.grid_x
    records["grid_y"] = descriptors.grid_y
    records["vector"] = descriptors.vectors
    header = DESCRIPTOR_SET_MAGIC + struct.pack("<IH", DESCRIPTOR_SET_VERSION, len(name)) + name
    atomic_write(path, header + struct.pack("<II", len(descriptors), descriptors.dim) + records.tobytes())


def load_descriptor_set(path: PathLike) -> LocalDescriptorSet:
    reader = _read(path)
    reader.magic(DESCRIPTOR_SET_MAGIC)
    reader.version(DESCRIPTOR_SET_VERSION)
    (name_length,) = reader.unpack("<H")
    image_id = reader.text(name_length)
    count, dim = reader.unpack("<II")
    if count > MAX_DESCRIPTORS:
        raise FormatError(f"{path}: descriptor count {count} exceeds the format limit")
    records = reader.array(_descriptor_dtype(dim), count)
    reader.finish()
    return LocalDescriptorSet(
        records["vector"].astype(np.float64).reshape(count, dim),
        records["strength"].astype(np.float64),
        records["scale"].astype(np.float64),
        records["grid_x"].astype(np.int64),
        records["grid_y"].astype(np.int64),
        image_id or None,
    )


# 倒排索引

def save_index(index: InvertedIndex, path: PathLike) -> None:
    params = index.params
    parts = [INDEX_MAGIC, struct.pack("<IIIffQ", INDEX_VERSION, index.kappa, params.d, params.alpha, params.tau,
                                      index.image_count)]
    for image_id, gamma, name in zip(index.image_ids.tolist(), index.gammas.tolist(), index.names):
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<QdH", image_id, gamma, len(encoded)) + encoded)
    parts.append(struct.pack("<I", len(index.postings)))
    for word in sorted(index.postings):
        posting = index.postings[word]
        parts.append(struct.pack("<II", word, len(posting)))
        parts.append(posting.encoded_ids())
        parts.append(np.ascontiguousarray(posting.signatures, dtype=np.uint8).tobytes())
    atomic_write(path, b"".join(parts))


def load_index(path: PathLike) -> InvertedIndex:
    reader = _read(path)
    reader.magic(INDEX_MAGIC)
    reader.version(INDEX_VERSION)
    kappa, dim, alpha, tau, image_count = reader.unpack("<IIffQ")
    try:
        params = KernelParams(alpha=float(alpha), tau=float(tau), d=dim)
    except ValidationError as e:
        raise FormatError(f"{path}: invalid kernel parameters in header: {e.errors()[0]['msg']}") from e

    if image_count * struct.calcsize("<QdH") > len(reader.data) - reader.offset:
        raise TruncatedError(f"{path}: header declares {image_count} images, file is too short")
    image_ids = np.zeros(image_count, dtype=np.int64)
    gammas = np.zeros(image_count, dtype=np.float64)
    names: List[str] = []
    for slot in range(image_count):
        image_id, gamma, name_length = reader.unpack("<QdH")
        image_ids[slot], gammas[slot] = image_id, gamma
        names.append(reader.text(name_length))
    if image_count > 1 and np.any(np.diff(image_ids) <= 0):
        raise FormatError(f"{path}: gamma table image ids are not strictly ascending")

    (word_count,) = reader.unpack("<I")
    postings: Dict[int, PostingList] = {}
    for _ in range(word_count):
        word, length = reader.unpack("<II")
        if word >= kappa or word in postings:
            raise FormatError(f"{path}: invalid or repeated word id {word}")
        try:
            deltas, reader.offset = decode_varints(reader.data, length, reader.offset)
        except InvertedIndexError as e:
            raise TruncatedError(f"{path}: posting list {word}: {e}") from e
        signatures = reader.array("<u1", length * params.n_bytes).reshape(length, params.n_bytes)
        postings[word] = PostingList(word, deltas, signatures.copy())
    reader.finish()
    index = InvertedIndex(params, kappa, postings, image_ids, gammas, names)
    for word, posting in postings.items():
        unknown = index.unknown_ids(posting.image_ids)
        if unknown.shape[0]:
            raise FormatError(f"{path}: posting list {word} refers to image id {int(unknown[0])} "
                              f"missing from the gamma table")
    return index


# 文本格式：真值与排序结果

def _split_ids(field: str, prefix: str, source: str) -> frozenset:
    if not field.startswith(prefix):
        raise FormatError(f"{source}: expected field starting with '{prefix}', got '{field}'")
    body = field[len(prefix):]
    return frozenset(item for item in body.split(",") if item)


def _lines(path: PathLike) -> Iterable[Tuple[int, List[str]]]:
    try:
        with open(path, "r", encoding="utf-8") as stream:
            text = stream.read()
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not valid UTF-8 text at byte {e.start}") from e
    for number, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        yield number, line.split("\t")


def save_retrieval_truth(truth: RetrievalGroundTruth, path: PathLike) -> None:
    lines = []
    for query_id in sorted(truth.queries):
        item = truth.queries[query_id]
        lines.append(f"{query_id}\tpositives:{','.join(sorted(item.positives))}\tignores:{','.join(sorted(item.ignores))}")
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_retrieval_truth(path: PathLike) -> RetrievalGroundTruth:
    queries: Dict[str, QueryTruth] = {}
    for number, fields in _lines(path):
        source = f"{path}:{number}"
        if len(fields) not in (2, 3):
            raise FormatError(f"{source}: expected 2 or 3 tab-separated fields, got {len(fields)}")
        positives = _split_ids(fields[1], "positives:", source)
        ignores = _split_ids(fields[2], "ignores:", source) if len(fields) == 3 else frozenset()
        if fields[0] in queries:
            raise FormatError(f"{source}: duplicate query {fields[0]}")
        queries[fields[0]] = QueryTruth(positives, ignores)
    return RetrievalGroundTruth(queries)


def save_class_truth(truth: ClassGroundTruth, database_path: PathLike, query_path: PathLike) -> None:
    database = [f"{image_id}\t{label}" for image_id, label in sorted(truth.image_labels.items())]
    queries = [f"{query_id}\t{label if label is not None else 'NONE'}"
               for query_id, label in sorted(truth.query_labels.items())]
    atomic_write(database_path, "\n".join(database) + ("\n" if database else ""))
    atomic_write(query_path, "\n".join(queries) + ("\n" if queries else ""))


def _label_pairs(path: PathLike) -> Iterable[Tuple[str, str]]:
    for number, fields in _lines(path):
        if len(fields) != 2:
            raise FormatError(f"{path}:{number}: expected 2 tab-separated fields, got {len(fields)}")
        yield fields[0], fields[1]


def load_class_truth(database_path: PathLike, query_path: Optional[PathLike] = None) -> ClassGroundTruth:
    image_labels = dict(_label_pairs(database_path))
    query_labels: Dict[str, Optional[str]] = {}
    if query_path is not None:
        query_labels = {query_id: (None if label == "NONE" else label)
                        for query_id, label in _label_pairs(query_path)}
    return ClassGroundTruth(image_labels, query_labels)


def save_rankings(rankings: Mapping[str, List[Tuple[str, float]]], path: PathLike) -> None:
    """query_id, image_id, score, rank (1-based); scores written with repr for exact round trips."""
    lines = []
    for query_id in sorted(rankings):
        for rank, (image_id, score) in enumerate(rankings[query_id], start=1):
            lines.append(f"{query_id}\t{image_id}\t{score!r}\t{rank}")
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_rankings(path: PathLike) -> Dict[str, List[Tuple[str, float]]]:
    rows: Dict[str, List[Tuple[int, str, float]]] = {}
    for number, fields in _lines(path):
        if len(fields) != 4:
            raise FormatError(f"{path}:{number}: expected 4 tab-separated fields, got {len(fields)}")
        try:
            score, rank = float(fields[2]), int(fields[3])
        except ValueError as e:
            raise FormatError(f"{path}:{number}: {e}") from e
        rows.setdefault(fields[0], []).append((rank, fields[1], score))
    return {query_id: [(image_id, score) for _, image_id, score in sorted(items)]
            for query_id, items in rows.items()}
