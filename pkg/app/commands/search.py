import logging

from app.commands.common import add_pipeline_flags, dense_ids, load_descriptor_sets, pipeline_from_args, progress, require_file
from app.core.exceptions import ConfigError
from app.services.codebook import quantize
from app.services.index import search, smk_search
from app.services.store import load_codebook, load_index, save_rankings

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("search", help="Rank database images for each query")
    parser.add_argument("queries", nargs="+", help="Query descriptor-set files or directories")
    parser.add_argument("--index", required=True, help="Index file")
    parser.add_argument("--codebook", required=True, help="Codebook the index was built with")
    parser.add_argument("--out", required=True, help="Output rankings TSV")
    parser.add_argument("--top-k", type=int, default=0, help="Results per query (0 = all)")
    parser.add_argument("--smk", action="store_true", help="Exhaustive SMK baseline instead of the inverted file")
    parser.add_argument("--database", nargs="+", default=None,
                        help="Database descriptor sets (required with --smk)")
    add_pipeline_flags(parser, "ma")
    parser.set_defaults(handler=cmd_search)


def cmd_search(args) -> int:
    """
    检索所有查询并写出排序结果

    排序结果中的图像使用数据库图像名，分数按降序，同分按编号升序。
    """
    pipeline = pipeline_from_args(args)
    if args.top_k < 0:
        raise ConfigError(f"top_k must be non-negative, got {args.top_k}")
    codebook = load_codebook(require_file(args.codebook))
    index = load_index(require_file(args.index))
    if index.kappa != codebook.kappa or index.params.d != codebook.dim:
        raise ConfigError(f"index (kappa={index.kappa}, d={index.params.d}) was not built with this codebook "
                          f"(kappa={codebook.kappa}, d={codebook.dim})")
    if pipeline.ma_query > codebook.kappa:
        raise ConfigError(f"ma={pipeline.ma_query} exceeds kappa={codebook.kappa}")
    queries = load_descriptor_sets(args.queries)

    database = None
    names = dict(zip(index.image_ids.tolist(), index.names))
    if args.smk:
        if not args.database:
            raise ConfigError("--smk needs the database descriptor sets (--database)")
        sets = {item.image_id: item for item in load_descriptor_sets(args.database)}
        database = [quantize(codebook, sets[name].vectors, 1, image_id) for image_id, name in dense_ids(list(sets))]
        names = dict(dense_ids(list(sets)))

    rankings = {}
    comparisons = 0
    for query in progress(queries, "searching"):
        quantized = quantize(codebook, query.vectors, pipeline.ma_query)
        if database is not None:
            result = smk_search(database, quantized, index.params, args.top_k)
        else:
            result = search(index, quantized, pipeline.ma_query, args.top_k)
        comparisons += result.hamming_comparisons
        rankings[query.image_id] = [(names[image_id], score) for image_id, score in result.ranking]

    save_rankings(rankings, args.out)
    logger.info(f"Searched {len(queries)} queries, {comparisons} hamming comparisons")
    print(f"search: {len(queries)} queries, mode={'smk' if args.smk else 'asmk'}, rankings -> {args.out}")
    return 0
