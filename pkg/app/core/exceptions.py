"""
异常定义模块
"""


class MatchKernelError(Exception):
    """Base class for every error raised by the pipeline."""

    kind = "error"


class ConfigError(MatchKernelError):
    kind = "config error"


class FeatureMapError(MatchKernelError):
    kind = "feature map error"


class WhiteningError(MatchKernelError):
    kind = "whitening error"


class CodebookError(MatchKernelError):
    kind = "codebook error"


class KernelError(MatchKernelError):
    kind = "kernel error"


class InvertedIndexError(MatchKernelError):
    kind = "index error"


class EvaluationError(MatchKernelError):
    kind = "evaluation error"


class StoreError(MatchKernelError):
    kind = "store error"


class FormatError(StoreError):
    """Unexpected magic bytes or malformed content."""

    kind = "format error"


class VersionError(StoreError):
    kind = "version error"


class TruncatedError(StoreError):
    """The file ended before the declared content was read."""

    kind = "truncated file"
