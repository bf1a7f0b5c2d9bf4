"""Sequential multimodal music recommender.

Thin Python face over the native core: numeric primitives plus the
synth / prepare / train / evaluate / report pipeline stages, all driven by a
single RunConfig whose keys match the CLI flags.
"""

from muserec._core import (
    PipelineError,
    RunConfig,
    cross_entropy,
    evaluate,
    pca_reduce,
    prepare,
    report,
    softmax,
    synth,
    train,
    truncated_svd,
    variant_names,
)

__all__ = [
    "PipelineError",
    "RunConfig",
    "cross_entropy",
    "evaluate",
    "pca_reduce",
    "prepare",
    "report",
    "softmax",
    "synth",
    "train",
    "truncated_svd",
    "variant_names",
]
