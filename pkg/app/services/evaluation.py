"""
Retrieval and classification metrics: AP / mAP, micro-AP (GAP) and the k-NN
classifiers that turn a ranking into a class prediction.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

from app.core.exceptions import EvaluationError

logger = logging.getLogger(__name__)

Ranking = Sequence[Tuple[Hashable, float]]


@dataclass(frozen=True)
class QueryTruth:
    positives: frozenset
    ignores: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "ignores", frozenset(self.ignores))
        overlap = self.positives & self.ignores
        if overlap:
            raise EvaluationError(f"ids listed as both positive and ignored: {sorted(map(str, overlap))[:5]}")


@dataclass(frozen=True)
class RetrievalGroundTruth:
    queries: Dict[str, QueryTruth] = field(default_factory=dict)


@dataclass(frozen=True)
class ClassGroundTruth:
    image_labels: Dict[Hashable, str] = field(default_factory=dict)
    query_labels: Dict[str, Optional[str]] = field(default_factory=dict)

    def class_frequencies(self) -> Dict[str, int]:
        frequencies: Dict[str, int] = {}
        for label in self.image_labels.values():
            frequencies[label] = frequencies.get(label, 0) + 1
        return frequencies


@dataclass(frozen=True)
class ClassPrediction:
    query_id: str
    label: str
    confidence: float


class ClassifierVariant(str, Enum):
    CLS1 = "cls1"
    CLS2 = "cls2"
    CLS3 = "cls3"

    @property
    def per_class(self) -> int:
        return 1 if self is ClassifierVariant.CLS1 else 10


def average_precision(ranking: Sequence[Hashable], truth: QueryTruth) -> Optional[float]:
    """
    Non-interpolated AP after removing ignored ids.

    Returns:
        float: AP in [0, 1], or None when the query has no positives (skip)
    """
    if len(set(ranking)) != len(ranking):
        raise EvaluationError("ranking contains duplicate ids")
    if not truth.positives:
        return None
    hits = 0
    precision_sum = 0.0
    rank = 0
    for image_id in ranking:
        if image_id in truth.ignores:
            continue
        rank += 1
        if image_id in truth.positives:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(truth.positives)


def per_query_average_precision(results: Mapping[str, Sequence[Hashable]],
                                truth: RetrievalGroundTruth) -> Dict[str, float]:
    """AP of every ground-truth query that has positives; missing rankings count as empty."""
    report: Dict[str, float] = {}
    for query_id in sorted(truth.queries):
        value = average_precision(list(results.get(query_id, [])), truth.queries[query_id])
        if value is None:
            logger.debug(f"Query {query_id} has no positives, skipped")
            continue
        report[query_id] = value
    return report


def mean_average_precision(results: Mapping[str, Sequence[Hashable]], truth: RetrievalGroundTruth) -> float:
    report = per_query_average_precision(results, truth)
    if not report:
        raise EvaluationError("no query with positives to evaluate")
    return math.fsum(report.values()) / len(report)


def micro_average_precision(predictions: Sequence[ClassPrediction], truth: ClassGroundTruth) -> float:
    """
    Global average precision over predictions ranked jointly by confidence.

    M counts the queries that have a true class; queries without one only ever
    contribute as false positives.
    """
    seen = set()
    for prediction in predictions:
        if prediction.query_id in seen:
            raise EvaluationError(f"more than one prediction for query {prediction.query_id}")
        seen.add(prediction.query_id)
    total = sum(1 for label in truth.query_labels.values() if label is not None)
    if total == 0:
        raise EvaluationError("no query with a true class")

    ordered = sorted(predictions, key=lambda item: (-item.confidence, item.query_id))
    correct = 0
    score = 0.0
    for position, prediction in enumerate(ordered, start=1):
        expected = truth.query_labels.get(prediction.query_id)
        if expected is not None and prediction.label == expected:
            correct += 1
            score += correct / position
    return score / total


def classify(result: Ranking, labels: ClassGroundTruth, variant: ClassifierVariant, query_id: str = "",
             class_freq: Optional[Mapping[str, int]] = None,
             n_classes: Optional[int] = None) -> Optional[ClassPrediction]:
    """
    k-NN class prediction from a ranking of (image_id, score).

    Every class accumulates its up-to-N highest ranked members (N = 1 for CLS1,
    10 otherwise); CLS3 accumulates sqrt(score) times log(n_classes / freq), where
    freq is the relative class frequency count / database size. The weight is
    therefore at least log(n_classes) and never negative.
    Ties go to the class that appears first in the ranking.
    """
    variant = ClassifierVariant(variant)
    if not result:
        return None
    if variant is ClassifierVariant.CLS3:
        class_freq = class_freq if class_freq is not None else labels.class_frequencies()
        n_classes = n_classes if n_classes is not None else len(class_freq)
        database_size = sum(class_freq.values())

    totals: "OrderedDict[str, float]" = OrderedDict()
    members: Dict[str, int] = {}
    for image_id, score in result:
        label = labels.image_labels.get(image_id)
        if label is None:
            continue
        if members.get(label, 0) >= variant.per_class:
            continue
        members[label] = members.get(label, 0) + 1
        if variant is ClassifierVariant.CLS3:
            if score < 0:
                raise EvaluationError(f"CLS3 needs non-negative scores, got {score} for image {image_id}")
            frequency = class_freq.get(label, 0)
            if frequency <= 0:
                raise EvaluationError(f"class {label} has no database frequency")
            contribution = math.sqrt(score) * math.log(n_classes * database_size / frequency)
        else:
            contribution = score
        totals[label] = totals.get(label, 0.0) + contribution

    if not totals:
        return None
    best_label, best = None, -math.inf
    for label, value in totals.items():
        if value > best:
            best_label, best = label, value
    return ClassPrediction(query_id, best_label, best)


def evaluate_classification(results: Mapping[str, Ranking], truth: ClassGroundTruth,
                            variant: ClassifierVariant) -> Tuple[float, List[ClassPrediction]]:
    """Classify every query with a known label entry and score the predictions with micro-AP."""
    frequencies = truth.class_frequencies()
    predictions = []
    for query_id in sorted(truth.query_labels):
        prediction = classify(results.get(query_id, []), truth, variant, query_id, frequencies, len(frequencies))
        if prediction is not None:
            predictions.append(prediction)
    return micro_average_precision(predictions, truth), predictions
