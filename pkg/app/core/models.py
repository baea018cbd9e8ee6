from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import List

# 码本文件以 u64 保存种子
MAX_SEED = 2 ** 64 - 1


class KernelParams(BaseModel):
    """选择性匹配核参数"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=3.0, description="Selectivity exponent", gt=0)
    tau: float = Field(default=0.0, description="Selectivity threshold", ge=0.0, le=1.0)
    d: int = Field(default=128, description="Binary signature dimension", ge=1)

    @property
    def n_bytes(self) -> int:
        return (self.d + 7) // 8


class PipelineConfig(BaseModel):
    """流水线配置模型"""
    model_config = ConfigDict(frozen=True)

    d: int = Field(default=128, description="Descriptor dimension after whitening", ge=1)
    kappa: int = Field(default=65536, description="Number of visual words", ge=1)
    tau: float = Field(default=0.0, description="Selectivity threshold", ge=0.0, le=1.0)
    alpha: float = Field(default=3.0, description="Selectivity exponent", gt=0)
    smooth: int = Field(default=3, description="Local smoothing window M", ge=1)
    topn: int = Field(default=1000, description="Strongest descriptors kept per image", ge=1)
    ma_query: int = Field(default=5, description="Multiple assignment factor for queries", ge=1)
    scales: List[float] = Field(
        default_factory=lambda: [0.25, 0.353, 0.5, 0.707, 1.0, 1.414, 2.0],
        description="Image scale factors used for multi-scale extraction",
    )
    seed: int = Field(default=0, description="Seed for all randomness", ge=0, le=MAX_SEED)

    @field_validator("smooth")
    @classmethod
    def smooth_must_be_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"smoothing window must be odd, got {value}")
        return value

    @field_validator("scales")
    @classmethod
    def scales_must_be_positive(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at least one scale is required")
        if any(scale <= 0 for scale in value):
            raise ValueError(f"scales must be positive, got {value}")
        return value

    def kernel_params(self) -> KernelParams:
        return KernelParams(alpha=self.alpha, tau=self.tau, d=self.d)


class SyntheticSpec(BaseModel):
    """合成数据集规格"""
    model_config = ConfigDict(frozen=True)

    n_images: int = Field(..., description="Database images", ge=1)
    descriptors_per_image: int = Field(..., description="Descriptors per image", ge=1)
    dim: int = Field(..., description="Descriptor dimension", ge=1)
    n_objects: int = Field(..., description="Distinct object identities", ge=1)
    burst_factor: int = Field(default=1, description="Repetitions of each object anchor and background texture", ge=1)
    noise_sigma: float = Field(default=0.0, description="Per-dimension jitter", ge=0.0)
    seed: int = Field(default=0, description="Generator seed", ge=0, le=MAX_SEED)
    n_queries: int = Field(default=0, description="Query images (0 = one per object)", ge=0)
    object_fraction: float = Field(default=0.25, description="Share of descriptors drawn from the object", gt=0.0, le=1.0)
    texture_pool: int = Field(default=0, description="Shared background textures (0 = fresh per image)", ge=0)
    distractor_queries: int = Field(default=0, description="Queries showing no known object", ge=0)
    texture_burst: int = Field(default=0, description="Repetitions of each background texture (0 = burst_factor)", ge=0)

    @property
    def query_count(self) -> int:
        return self.n_queries or self.n_objects

    @property
    def background_burst(self) -> int:
        return self.texture_burst or self.burst_factor
