from app.commands.common import require_file
from app.services.index import index_stats
from app.services.store import load_index


def register(subparsers) -> None:
    parser = subparsers.add_parser("stats", help="Report index size statistics")
    parser.add_argument("index", help="Index file")
    parser.set_defaults(handler=cmd_stats)


def cmd_stats(args) -> int:
    index = load_index(require_file(args.index))
    stats = index_stats(index)
    print(f"images={stats.image_count}")
    print(f"kappa={index.kappa}")
    print(f"d={index.params.d}")
    print(f"nonempty_words={stats.nonempty_words}")
    print(f"signatures={stats.total_signatures}")
    print(f"empty_images={stats.empty_images}")
    print(f"mean_words_per_image={stats.mean_words_per_image:.6f}")
    print(f"bytes={stats.bytes}")
    return 0
