from .cache import cache_read, cache_write
from .dsp import build_cqt_kernel, build_mel_filterbank, stft
from .extractors import (
    FEATURE_TAGS,
    FeatureConfig,
    FeatureMap,
    FeatureStats,
    RepresentationTag,
    cqt,
    delta,
    extract,
    logmel,
    mfcc,
)

__all__ = [
    "FEATURE_TAGS",
    "FeatureConfig",
    "FeatureMap",
    "FeatureStats",
    "RepresentationTag",
    "build_cqt_kernel",
    "build_mel_filterbank",
    "cache_read",
    "cache_write",
    "cqt",
    "delta",
    "extract",
    "logmel",
    "mfcc",
    "stft",
]
