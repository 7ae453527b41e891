"""Continuous affect recognition over per-frame visual features.

Thin layer over the compiled ``_core`` module; configs may be given as dicts.
"""

import json

from ._core import (
    CheckpointMismatchError,
    Checkpoint,
    ConfigError,
    DataError,
    Error,
    NumericalError,
    StructuralError,
    Video,
    ccc,
    config_schema,
    fold_of,
    gradcheck,
    load_dataset,
    lr_schedule,
    synthetic,
    write_dataset,
)
from ._core import train as _train

__all__ = [
    "Checkpoint",
    "CheckpointMismatchError",
    "ConfigError",
    "DataError",
    "Error",
    "NumericalError",
    "StructuralError",
    "Video",
    "ccc",
    "config_schema",
    "fold_of",
    "gradcheck",
    "load_dataset",
    "lr_schedule",
    "split_by_fold",
    "synthetic",
    "train",
    "write_dataset",
]


def train(config, train_videos, val_videos=()):
    """Train a model. ``config`` is a run-configuration dict or JSON string.

    Returns ``(checkpoint, history)`` where ``checkpoint`` holds the
    best-validation parameters and ``history`` is one dict per epoch.
    """
    if not isinstance(config, str):
        config = json.dumps(config)
    return _train(config, list(train_videos), list(val_videos))


def split_by_fold(videos, fold=0):
    """(train, val) lists, val being the videos whose id hashes to ``fold``."""
    train_videos, val_videos = [], []
    for v in videos:
        (val_videos if fold_of(v.video_id) == fold else train_videos).append(v)
    return train_videos, val_videos
