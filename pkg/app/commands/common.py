"""
命令行公共工具：参数合并、输入文件收集、进度条
"""
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from pydantic import ValidationError
from tqdm import tqdm

from app.core.config import config
from app.core.exceptions import ConfigError
from app.core.models import PipelineConfig
from app.services.features import LocalDescriptorSet
from app.services.store import load_descriptor_set

logger = logging.getLogger(__name__)

DESCRIPTOR_SUFFIX = ".dset"
FEATURE_MAP_SUFFIX = ".dfmp"

# argparse 目标名 -> PipelineConfig 字段名
_PIPELINE_FLAGS = {
    "dim": ("d", int, "Descriptor dimension after whitening"),
    "kappa": ("kappa", int, "Number of visual words"),
    "tau": ("tau", float, "Selectivity threshold"),
    "alpha": ("alpha", float, "Selectivity exponent"),
    "smooth": ("smooth", int, "Local smoothing window (odd)"),
    "topn": ("topn", int, "Strongest descriptors kept per image"),
    "ma": ("ma_query", int, "Multiple assignment factor for queries"),
}


def add_pipeline_flags(parser, *names: str) -> None:
    """注册流水线参数，默认值来自环境配置"""
    for name in names:
        if name == "scales":
            parser.add_argument("--scales", type=str, default=None,
                                help="Comma separated scale factors")
            continue
        _, kind, text = _PIPELINE_FLAGS[name]
        parser.add_argument(f"--{name}", type=kind, default=None, help=text)


def pipeline_from_args(args) -> PipelineConfig:
    """合并环境配置与命令行参数，校验失败时抛出 ConfigError"""
    overrides = {}
    for name, (field, _, _) in _PIPELINE_FLAGS.items():
        overrides[field] = getattr(args, name, None)
    raw_scales = getattr(args, "scales", None)
    try:
        if raw_scales is not None:
            overrides["scales"] = [float(item) for item in raw_scales.split(",") if item.strip()]
        overrides["seed"] = getattr(args, "seed", None)
        return config.pipeline(**overrides)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(details) from e
    except ValueError as e:
        raise ConfigError(str(e)) from e


def progress(iterable: Iterable, desc: str, total=None):
    """日志级别高于 INFO 时关闭进度条"""
    quiet = logging.getLogger().getEffectiveLevel() > logging.INFO
    return tqdm(iterable, desc=desc, total=total, disable=quiet, leave=False)


def require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def collect_files(inputs: Sequence[str], suffix: str) -> List[Path]:
    """展开文件与目录参数，按路径排序"""
    files = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.is_file() and p.name.endswith(suffix)))
        elif path.is_file():
            files.append(path)
        else:
            raise FileNotFoundError(f"no such file or directory: {path}")
    return sorted(set(files))


def load_descriptor_sets(inputs: Sequence[str]) -> List[LocalDescriptorSet]:
    """读取描述子集合，按图像名排序；未命名的集合使用文件名"""
    sets: Dict[str, LocalDescriptorSet] = {}
    for path in progress(collect_files(inputs, DESCRIPTOR_SUFFIX), "loading descriptors"):
        descriptors = load_descriptor_set(path)
        name = descriptors.image_id or path.name[:-len(DESCRIPTOR_SUFFIX)]
        if name in sets:
            raise ConfigError(f"image {name} appears in more than one descriptor file")
        sets[name] = descriptors.with_image_id(name)
    logger.info(f"Loaded {len(sets)} descriptor sets")
    return [sets[name] for name in sorted(sets)]


def group_feature_maps(inputs: Sequence[str]) -> Dict[str, List[Path]]:
    """
    按图像分组特征图文件

    `<image>@<scale>.dfmp` 归入 `<image>`；目录参数中的所有特征图归入以目录名命名的图像。
    """
    groups: Dict[str, List[Path]] = {}
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            maps = sorted(p for p in path.iterdir() if p.is_file() and p.name.endswith(FEATURE_MAP_SUFFIX))
            groups.setdefault(path.name, []).extend(maps)
        elif path.is_file():
            stem = path.name[:-len(FEATURE_MAP_SUFFIX)] if path.name.endswith(FEATURE_MAP_SUFFIX) else path.stem
            groups.setdefault(stem.split("@", 1)[0], []).append(path)
        else:
            raise FileNotFoundError(f"no such file or directory: {path}")
    return {image: sorted(set(paths)) for image, paths in sorted(groups.items())}


def dense_ids(names: Sequence[str]) -> List[Tuple[int, str]]:
    """索引内部图像编号：按名称排序后的连续整数"""
    return list(enumerate(sorted(names)))


def output_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
