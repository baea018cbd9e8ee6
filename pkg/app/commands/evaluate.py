import logging

from app.commands.common import require_file
from app.core.exceptions import ConfigError
from app.services.evaluation import (
    ClassifierVariant,
    evaluate_classification,
    mean_average_precision,
    per_query_average_precision,
)
from app.services.store import atomic_write, load_class_truth, load_rankings, load_retrieval_truth

logger = logging.getLogger(__name__)

MODES = ("map", "uap", "cls1", "cls2", "cls3")


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Score rankings against ground truth")
    parser.add_argument("rankings", help="Rankings TSV written by search")
    parser.add_argument("--mode", choices=MODES, default="map", help="Metric to compute")
    parser.add_argument("--truth", default=None, help="Retrieval ground truth (map)")
    parser.add_argument("--db-labels", default=None, help="Database image labels (uap, cls*)")
    parser.add_argument("--query-labels", default=None, help="Query labels, NONE for distractors (uap, cls*)")
    parser.add_argument("--per-query", action="store_true", help="Also report the AP of every query")
    parser.add_argument("--out", default=None, help="Write the key=value report to this file")
    parser.set_defaults(handler=cmd_evaluate)


def _retrieval_report(rankings, args):
    if not args.truth:
        raise ConfigError("mode map needs --truth")
    truth = load_retrieval_truth(require_file(args.truth))
    ordered = {query_id: [image for image, _ in items] for query_id, items in rankings.items()}
    mean = mean_average_precision(ordered, truth)
    per_query = per_query_average_precision(ordered, truth)
    metrics = [("map", mean), ("queries", len(per_query))]
    if args.per_query:
        metrics.extend((f"ap.{query_id}", value) for query_id, value in per_query.items())
    return metrics


def _classification_report(rankings, args):
    if not args.db_labels or not args.query_labels:
        raise ConfigError(f"mode {args.mode} needs --db-labels and --query-labels")
    truth = load_class_truth(require_file(args.db_labels), require_file(args.query_labels))
    variants = list(ClassifierVariant) if args.mode == "uap" else [ClassifierVariant(args.mode)]
    metrics = []
    for variant in variants:
        value, predictions = evaluate_classification(rankings, truth, variant)
        metrics.append((f"uap.{variant.value}", value))
        metrics.append((f"predictions.{variant.value}", len(predictions)))
    return metrics


def cmd_evaluate(args) -> int:
    """计算检索或分类指标，先输出可读文本，再输出 key=value 行"""
    rankings = load_rankings(require_file(args.rankings))
    if args.mode == "map":
        metrics = _retrieval_report(rankings, args)
    else:
        metrics = _classification_report(rankings, args)

    print(f"evaluation ({args.mode}) of {args.rankings}")
    for key, value in metrics:
        if isinstance(value, float):
            print(f"  {key:<24} {100.0 * value:7.2f}")
        else:
            print(f"  {key:<24} {value:7d}")
    lines = [f"{key}={value!r}" for key, value in metrics]
    for line in lines:
        print(line)
    if args.out:
        atomic_write(args.out, "\n".join(lines) + "\n")
        logger.info(f"Wrote metrics to {args.out}")
    return 0
