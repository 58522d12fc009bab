"""End-to-end SI and TC training and prediction."""

from .common import TrainConfig
from .si import SiModel, predict_si, predict_si_many, segment_article, train_si
from .tc import (
    Ensemble, TcModel, TcPrediction, build_ensemble, ensemble_vote, predict_tc, resolve_overlaps, train_tc,
)

__all__ = [
    "Ensemble", "SiModel", "TcModel", "TcPrediction", "TrainConfig", "build_ensemble", "ensemble_vote",
    "predict_si", "predict_si_many", "predict_tc", "resolve_overlaps", "segment_article", "train_si", "train_tc",
]
