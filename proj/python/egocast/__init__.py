"""Egohood features, spatially cross-validated boosted trees and price explanations."""

from ._egocast import (
    Error,
    LoadError,
    Model,
    StaleArtifactError,
    TrainConfig,
    ValidationError,
    decay_score,
    egohood,
    egohood_stage,
    evaluate,
    explain,
    features,
    folds,
    ingest,
    land_use_mix,
    leaf_weight,
    load_model,
    mae,
    mdape,
    network_distances,
    nowcast,
    set_log_level,
    split_gain,
    synth,
    train,
    train_stage,
)

__all__ = [name for name in dir() if not name.startswith("_")]
