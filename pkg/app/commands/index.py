import logging

from app.commands.common import add_pipeline_flags, dense_ids, load_descriptor_sets, pipeline_from_args, progress, require_file
from app.core.models import KernelParams
from app.services.codebook import quantize
from app.services.index import build_index, index_stats
from app.services.kernel import build_record
from app.services.store import load_codebook, save_index

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("index", help="Build the ASMK inverted file")
    parser.add_argument("inputs", nargs="+", help="Database descriptor-set files or directories")
    parser.add_argument("--codebook", required=True, help="Codebook file")
    parser.add_argument("--out", required=True, help="Output index file")
    add_pipeline_flags(parser, "tau", "alpha")
    parser.set_defaults(handler=cmd_index)


def cmd_index(args) -> int:
    """数据库图像按名称排序后编号，单一分配量化并聚合"""
    pipeline = pipeline_from_args(args)
    codebook = load_codebook(require_file(args.codebook))
    params = KernelParams(alpha=pipeline.alpha, tau=pipeline.tau, d=codebook.dim)
    sets = {item.image_id: item for item in load_descriptor_sets(args.inputs)}

    records, names = [], []
    for image_id, name in progress(dense_ids(list(sets)), "indexing", total=len(sets)):
        descriptors = sets[name]
        records.append(build_record(quantize(codebook, descriptors.vectors, 1, image_id), codebook.kappa))
        names.append(name)

    index = build_index(records, params, codebook.kappa, names)
    save_index(index, args.out)
    stats = index_stats(index)
    print(f"index: {stats.image_count} images, {stats.total_signatures} signatures, {stats.bytes} bytes")
    return 0
