"""Sequence autoencoder with joint K-means clustering of latent vectors."""

from __future__ import annotations

from .cluster import KMeansResult, ari, assign, kmeans, silhouette
from .model import ConvRecAutoencoder, EncoderConfig, composite_loss
from .train import (
    ClusterModel,
    TrainConfig,
    TrainingDivergedError,
    grid_search,
    lambda_sweep,
    pretrain,
    select_k,
    train,
)

__all__ = [
    "KMeansResult",
    "ari",
    "assign",
    "kmeans",
    "silhouette",
    "ConvRecAutoencoder",
    "EncoderConfig",
    "composite_loss",
    "ClusterModel",
    "TrainConfig",
    "TrainingDivergedError",
    "grid_search",
    "lambda_sweep",
    "pretrain",
    "select_k",
    "train",
]
