"""Local similarity-flow distillation toolkit."""

from ._core import (
    SchemaError,
    alpha_sigma,
    ext_motion_score,
    fuse_feature_space,
    fuse_lgf,
    fusion_gap,
    gen_synthetic_video,
    kl_feat_loss,
    local_gram_flow,
    minmax_norm,
    motion_score,
    read_lgft,
    score_document,
    temp_softmax,
    write_lgft,
)

__all__ = [
    "SchemaError",
    "alpha_sigma",
    "ext_motion_score",
    "fuse_feature_space",
    "fuse_lgf",
    "fusion_gap",
    "gen_synthetic_video",
    "kl_feat_loss",
    "local_gram_flow",
    "minmax_norm",
    "motion_score",
    "read_lgft",
    "score_document",
    "temp_softmax",
    "write_lgft",
]
