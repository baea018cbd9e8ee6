import logging

import numpy as np

from app.commands.common import add_pipeline_flags, load_descriptor_sets, pipeline_from_args
from app.core.config import config
from app.services.codebook import train_codebook
from app.services.store import save_codebook

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("codebook", help="Train a k-means visual codebook")
    parser.add_argument("inputs", nargs="+", help="Descriptor-set files or directories")
    parser.add_argument("--out", required=True, help="Output codebook file")
    parser.add_argument("--iters", type=int, default=config.KMEANS_ITERS, help="Maximum k-means iterations")
    parser.add_argument("--sample", type=int, default=0, help="Random training subsample size (0 = all)")
    add_pipeline_flags(parser, "kappa")
    parser.set_defaults(handler=cmd_train_codebook)


def cmd_train_codebook(args) -> int:
    """训练码本，所有随机性来自 --seed"""
    pipeline = pipeline_from_args(args)
    sets = load_descriptor_sets(args.inputs)
    vectors = [item.vectors for item in sets if len(item)]
    if not vectors:
        raise FileNotFoundError("no descriptors to train on")
    sample = np.vstack(vectors)
    if 0 < args.sample < sample.shape[0]:
        rng = np.random.default_rng(pipeline.seed)
        sample = sample[np.sort(rng.choice(sample.shape[0], args.sample, replace=False))]
        logger.info(f"Subsampled {args.sample} training descriptors")

    codebook = train_codebook(sample, pipeline.kappa, args.iters, pipeline.seed)
    save_codebook(codebook, args.out)
    print(f"codebook: kappa={codebook.kappa} d={codebook.dim} objective={codebook.objective_history[-1]:.6g}")
    return 0
