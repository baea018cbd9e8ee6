import logging

from pydantic import ValidationError

from app.commands.common import DESCRIPTOR_SUFFIX, output_dir
from app.core.exceptions import ConfigError
from app.core.models import SyntheticSpec
from app.services.store import save_class_truth, save_descriptor_set, save_retrieval_truth
from app.services.synthetic import generate_synthetic

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="Generate a synthetic corpus with ground truth")
    parser.add_argument("out_dir", help="Output directory")
    parser.add_argument("--images", type=int, default=200, help="Database images")
    parser.add_argument("--descriptors", type=int, default=100, help="Descriptors per image")
    parser.add_argument("--dim", type=int, default=32, help="Descriptor dimension")
    parser.add_argument("--objects", type=int, default=10, help="Distinct objects")
    parser.add_argument("--burst", type=int, default=1, help="Repetitions of each object anchor and background texture")
    parser.add_argument("--noise", type=float, default=0.0, help="Jitter standard deviation")
    parser.add_argument("--queries", type=int, default=0, help="Object queries (0 = one per object)")
    parser.add_argument("--object-fraction", type=float, default=0.25, help="Share of object descriptors")
    parser.add_argument("--texture-pool", type=int, default=0, help="Shared background textures (0 = fresh)")
    parser.add_argument("--distractors", type=int, default=0, help="Queries showing no object")
    parser.add_argument("--texture-burst", type=int, default=0,
                        help="Repetitions of each background texture (0 = --burst)")
    parser.set_defaults(handler=cmd_synth)


def cmd_synth(args) -> int:
    """
    生成合成数据集

    输出目录结构:
        database/*.dset, queries/*.dset, truth.tsv, db_labels.tsv, query_labels.tsv
    """
    try:
        spec = SyntheticSpec(
            n_images=args.images,
            descriptors_per_image=args.descriptors,
            dim=args.dim,
            n_objects=args.objects,
            burst_factor=args.burst,
            noise_sigma=args.noise,
            seed=args.seed if args.seed is not None else 0,
            n_queries=args.queries,
            object_fraction=args.object_fraction,
            texture_pool=args.texture_pool,
            distractor_queries=args.distractors,
            texture_burst=args.texture_burst,
        )
    except ValidationError as e:
        raise ConfigError("; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())) from e

    corpus = generate_synthetic(spec)
    root = output_dir(args.out_dir)
    database_dir = output_dir(root / "database")
    query_dir = output_dir(root / "queries")
    for descriptors in corpus.database:
        save_descriptor_set(descriptors, database_dir / f"{descriptors.image_id}{DESCRIPTOR_SUFFIX}")
    for descriptors in corpus.queries:
        save_descriptor_set(descriptors, query_dir / f"{descriptors.image_id}{DESCRIPTOR_SUFFIX}")
    save_retrieval_truth(corpus.retrieval, root / "truth.tsv")
    save_class_truth(corpus.classes, root / "db_labels.tsv", root / "query_labels.tsv")
    logger.info(f"Wrote synthetic corpus to {root}")
    print(f"synth: {len(corpus.database)} images, {len(corpus.queries)} queries -> {root}")
    return 0
