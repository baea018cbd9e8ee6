import sys
import os
import argparse
import logging
from typing import List, Optional

from threadpoolctl import threadpool_limits

# 添加项目根目录到 Python 路径
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from app.core.config import config
from app.core.exceptions import ConfigError, MatchKernelError
from app.commands import codebook, evaluate, extract, index, search, stats, synth, whitening

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# 退出码
EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_MISSING = 2
EXIT_CONFIG = 3


def setup_logging(level: str, log_file: Optional[str] = None) -> None:
    """配置日志：标准错误输出，可选写入文件"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    """构建命令行解析器并注册所有命令"""
    parser = argparse.ArgumentParser(
        prog=config.APP_NAME,
        description="HOW local descriptors with ASMK retrieval and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"{config.APP_NAME} {config.VERSION}")
    parser.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=None,
                        help="Log verbosity (default: MK_LOG)")
    parser.add_argument("--threads", type=int, default=None, help="Worker / BLAS thread cap (default: MK_THREADS)")
    parser.add_argument("--seed", type=int, default=None, help="Seed for all randomness (default: MK_SEED)")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    # 注册命令
    for module in (whitening, codebook, extract, index, search, evaluate, synth, stats):
        module.register(subparsers)
    return parser


def run(args) -> int:
    threads = args.threads if args.threads is not None else config.THREADS
    if threads < 1:
        raise ConfigError(f"threads must be positive, got {threads}")
    args.threads = threads
    if args.seed is None:
        args.seed = config.SEED
    with threadpool_limits(limits=threads):
        return args.handler(args)


def main(argv: Optional[List[str]] = None) -> int:
    """命令行入口，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(args.log_level or config.LOG_LEVEL, config.LOG_FILE)

    # 验证配置
    if not config.validate_config():
        print("error: config error: environment configuration is invalid", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MatchKernelError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except FileNotFoundError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: io error: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
