import logging

import numpy as np

from app.commands.common import FEATURE_MAP_SUFFIX, add_pipeline_flags, collect_files, pipeline_from_args, progress
from app.services.features import attention_map, fit_whitening, identity_whitening, local_smooth
from app.services.store import load_feature_map, save_whitening

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("whitening", help="Fit PCA whitening on smoothed feature-map locations")
    parser.add_argument("inputs", nargs="+", help="Feature-map files or directories")
    parser.add_argument("--out", required=True, help="Output whitening file")
    parser.add_argument("--eps", type=float, default=None, help="Eigenvalue regularizer")
    parser.add_argument("--identity", action="store_true", help="Write an identity transform (no whitening)")
    parser.add_argument("--allow-negative", action="store_true", help="Accept negative activations")
    add_pipeline_flags(parser, "dim", "smooth", "topn")
    parser.set_defaults(handler=cmd_fit_whitening)


def cmd_fit_whitening(args) -> int:
    """
    拟合白化参数

    每张特征图先做局部平滑，再按激活强度保留最强的 topn 个位置作为样本。
    """
    pipeline = pipeline_from_args(args)
    files = collect_files(args.inputs, FEATURE_MAP_SUFFIX)
    if not files:
        raise FileNotFoundError("no feature maps given")

    parts = []
    for path in progress(files, "sampling"):
        feature_map = load_feature_map(path, args.allow_negative)
        strengths = attention_map(feature_map).ravel()
        order = np.lexsort((np.arange(strengths.shape[0]), -strengths))[:pipeline.topn]
        parts.append(local_smooth(feature_map, pipeline.smooth).vectors()[order])
    sample = np.vstack(parts)

    if args.identity:
        transform = identity_whitening(sample.shape[1])
    else:
        transform = fit_whitening(sample, pipeline.d, args.eps)
    save_whitening(transform, args.out)
    logger.info(f"Wrote whitening {transform.input_dim} -> {transform.output_dim} to {args.out}")
    print(f"whitening: {transform.input_dim} -> {transform.output_dim} from {sample.shape[0]} samples")
    return 0
