import os
import logging
from typing import List, Optional
from dotenv import load_dotenv

# 加载 .env 文件
load_dotenv()

logger = logging.getLogger(__name__)


def _parse_scales(raw: str) -> List[float]:
    return [float(item) for item in raw.split(",") if item.strip()]


class Config:
    """应用配置类"""

    # 应用配置
    APP_NAME: str = os.getenv("APP_NAME", "asmk-how")
    VERSION: str = os.getenv("VERSION", "0.1.0")

    # 日志配置
    LOG_LEVEL: str = os.getenv("MK_LOG", "INFO").upper()
    LOG_FILE: Optional[str] = os.getenv("MK_LOG_FILE")

    # 并发配置
    THREADS: int = int(os.getenv("MK_THREADS", "1"))

    # 流水线默认参数
    DIM: int = int(os.getenv("MK_DIM", "128"))
    KAPPA: int = int(os.getenv("MK_KAPPA", "65536"))
    TAU: float = float(os.getenv("MK_TAU", "0.0"))
    ALPHA: float = float(os.getenv("MK_ALPHA", "3.0"))
    SMOOTH: int = int(os.getenv("MK_SMOOTH", "3"))
    TOPN: int = int(os.getenv("MK_TOPN", "1000"))
    MA_QUERY: int = int(os.getenv("MK_MA", "5"))
    SCALES: List[float] = _parse_scales(os.getenv("MK_SCALES", "0.25,0.353,0.5,0.707,1.0,1.414,2.0"))
    SEED: int = int(os.getenv("MK_SEED", "0"))
    KMEANS_ITERS: int = int(os.getenv("MK_KMEANS_ITERS", "25"))

    @classmethod
    def pipeline(cls, **overrides):
        """返回经过校验的流水线配置"""
        from app.core.models import PipelineConfig

        values = {
            "d": cls.DIM,
            "kappa": cls.KAPPA,
            "tau": cls.TAU,
            "alpha": cls.ALPHA,
            "smooth": cls.SMOOTH,
            "topn": cls.TOPN,
            "ma_query": cls.MA_QUERY,
            "scales": list(cls.SCALES),
            "seed": cls.SEED,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return PipelineConfig(**values)

    @classmethod
    def validate_config(cls) -> bool:
        """验证配置是否有效"""
        try:
            if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
                raise ValueError(f"Invalid MK_LOG: {cls.LOG_LEVEL}")
            if cls.THREADS < 1:
                raise ValueError(f"Invalid MK_THREADS: {cls.THREADS}")
            cls.pipeline()
            return True
        except Exception as e:
            logger.error(f"Configuration validation error: {e}")
            return False


# 全局配置实例
config = Config()
