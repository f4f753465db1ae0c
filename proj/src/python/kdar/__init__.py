"""Knowledge-enhanced dual-alignment recommender."""

from ._core import (
    AblationFlags,
    CheckpointError,
    Config,
    ConfigError,
    DataConfig,
    DataError,
    Dataset,
    DatasetStats,
    Hyperparameters,
    InteractionFormat,
    KdarError,
    NumericalError,
    ParseError,
    TrainConfig,
    ablate,
    auc,
    evaluate,
    gradient_check,
    load_dataset,
    ndcg_at_k,
    prepare,
    rank_all,
    recall_at_k,
    sweep,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
