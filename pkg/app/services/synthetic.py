"""
Synthetic corpus generator.

Every database image shows one object: a fixed share of its descriptors lies
near that object's anchor vectors, the rest is background texture. Anchors and
textures are each repeated `burst_factor` times (textures `texture_burst` times
when set) and every copy gets its own jitter, which is what produces bursty
visual words. Queries are generated the same way; distractor queries show no
object at all.
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from app.core.models import SyntheticSpec
from app.services.evaluation import ClassGroundTruth, QueryTruth, RetrievalGroundTruth
from app.services.features import LocalDescriptorSet, merge_multiscale

logger = logging.getLogger(__name__)

_UNIFORM_BOUND = math.sqrt(3.0)


@dataclass(frozen=True)
class SyntheticCorpus:
    database: List[LocalDescriptorSet]
    queries: List[LocalDescriptorSet]
    retrieval: RetrievalGroundTruth
    classes: ClassGroundTruth


def object_label(obj: int) -> str:
    return f"obj{obj:03d}"


def _repeat(rows: np.ndarray, count: int, burst: int) -> np.ndarray:
    """First ceil(count / burst) rows, each repeated burst times, cut to count rows."""
    distinct = -(-count // burst)
    return np.repeat(rows[:distinct], burst, axis=0)[:count]


def _split(spec: SyntheticSpec):
    n_object = min(spec.descriptors_per_image, max(1, int(round(spec.object_fraction * spec.descriptors_per_image))))
    return n_object, spec.descriptors_per_image - n_object


class _Sampler:
    """Draws image content in a fixed order from one generator."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.n_object, self.n_background = _split(spec)
        self.anchors = self.rng.standard_normal((spec.n_objects, self.n_object, spec.dim))
        self.pool = None
        if spec.texture_pool > 0:
            self.pool = self.rng.uniform(-_UNIFORM_BOUND, _UNIFORM_BOUND, (spec.texture_pool, spec.dim))

    def _background(self, count: int) -> np.ndarray:
        if count == 0:
            return np.zeros((0, self.spec.dim))
        burst = self.spec.background_burst
        distinct = -(-count // burst)
        if self.pool is None:
            textures = self.rng.uniform(-_UNIFORM_BOUND, _UNIFORM_BOUND, (distinct, self.spec.dim))
        else:
            replace = distinct > self.pool.shape[0]
            textures = self.pool[self.rng.choice(self.pool.shape[0], distinct, replace=replace)]
        copies = _repeat(textures, count, burst)
        return copies + self.spec.noise_sigma * self.rng.standard_normal(copies.shape)

    def image(self, name: str, obj) -> LocalDescriptorSet:
        if obj is None:
            vectors = self._background(self.spec.descriptors_per_image)
        else:
            copies = _repeat(self.anchors[obj], self.n_object, self.spec.burst_factor)
            objects = copies + self.spec.noise_sigma * self.rng.standard_normal(copies.shape)
            vectors = np.vstack([objects, self._background(self.n_background)])
        n = vectors.shape[0]
        strengths = self.rng.uniform(0.5, 1.5, n)
        unordered = LocalDescriptorSet(vectors, strengths, np.ones(n), np.arange(n), np.zeros(n, np.int64))
        return merge_multiscale([unordered], n, name)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """
    Generate database images, queries and both kinds of ground truth.

    Args:
        spec (SyntheticSpec): Corpus shape, burstiness and noise

    Returns:
        SyntheticCorpus: Descriptor sets named img*/q*/d* plus ground truth
    """
    sampler = _Sampler(spec)
    objects = sampler.rng.permutation(np.arange(spec.n_images) % spec.n_objects)

    database = []
    image_labels = {}
    members = {obj: [] for obj in range(spec.n_objects)}
    for i, obj in enumerate(objects.tolist()):
        name = f"img{i:05d}"
        database.append(sampler.image(name, obj))
        image_labels[name] = object_label(obj)
        members[obj].append(name)

    queries = []
    query_truth = {}
    query_labels = {}
    for j in range(spec.query_count):
        obj = j % spec.n_objects
        name = f"q{j:05d}"
        queries.append(sampler.image(name, obj))
        query_truth[name] = QueryTruth(frozenset(members[obj]))
        query_labels[name] = object_label(obj)
    for j in range(spec.distractor_queries):
        name = f"d{j:05d}"
        queries.append(sampler.image(name, None))
        query_truth[name] = QueryTruth(frozenset())
        query_labels[name] = None

    logger.info(f"Generated synthetic corpus: {len(database)} images, {len(queries)} queries, "
                f"{spec.n_objects} objects, burst={spec.burst_factor}, noise={spec.noise_sigma}")
    return SyntheticCorpus(database, queries, RetrievalGroundTruth(query_truth),
                           ClassGroundTruth(image_labels, query_labels))
