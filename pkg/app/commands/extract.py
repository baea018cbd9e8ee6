import logging
from pathlib import Path

from app.commands.common import (
    DESCRIPTOR_SUFFIX,
    add_pipeline_flags,
    group_feature_maps,
    output_dir,
    pipeline_from_args,
    progress,
    require_file,
)
from app.services.features import extract_multiscale
from app.services.store import load_feature_map, load_whitening, save_descriptor_set

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("extract", help="Extract weighted local descriptors from feature maps")
    parser.add_argument("inputs", nargs="+",
                        help="Feature maps named <image>@<scale>.dfmp, or one directory per image")
    parser.add_argument("--whitening", required=True, help="Whitening file")
    parser.add_argument("--out", required=True, help="Output directory for descriptor sets")
    parser.add_argument("--allow-negative", action="store_true", help="Accept negative activations")
    add_pipeline_flags(parser, "smooth", "topn", "scales")
    parser.set_defaults(handler=cmd_extract)


def cmd_extract(args) -> int:
    """多尺度提取，每张图像写出一个描述子集合文件"""
    pipeline = pipeline_from_args(args)
    transform = load_whitening(require_file(args.whitening))
    groups = group_feature_maps(args.inputs)
    target = output_dir(args.out)
    known_scales = set(pipeline.scales)

    total = 0
    for image, paths in progress(groups.items(), "extracting", total=len(groups)):
        maps = [load_feature_map(path, args.allow_negative) for path in paths]
        for path, feature_map in zip(paths, maps):
            if not any(abs(feature_map.scale_factor - scale) < 1e-3 for scale in known_scales):
                logger.warning(f"{path}: scale {feature_map.scale_factor} is not among the configured scales")
        descriptors = extract_multiscale(maps, transform, pipeline.smooth, pipeline.topn, image,
                                         workers=getattr(args, "threads", 1) or 1)
        save_descriptor_set(descriptors, Path(target) / f"{image}{DESCRIPTOR_SUFFIX}")
        total += len(descriptors)
    logger.info(f"Extracted {total} descriptors for {len(groups)} images into {target}")
    print(f"extract: {len(groups)} images, {total} descriptors")
    return 0
