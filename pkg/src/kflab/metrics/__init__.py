"""Evaluation stack: lipreader + LipScore, Frechet distance with sliding-
window drift, NSV classification accuracy, emotion accuracy, and the
perturbation-robustness harness."""

from .fid import FidAccumulator, FidStats, frechet_distance, sliding_fid
from .lipscore import Lipreader, lipscore, load_lipreader, save_lipreader, train_lipreader
from .nsv import NsvClassifier, load_nsv, nsv_accuracy, save_nsv, train_nsv_classifier
from .emotion import (EmotionRegressor, emotion_accuracy, load_emotion,
                      save_emotion, train_emotion_regressor)
from .perturb import perturbation_harness

__all__ = [
    "FidAccumulator", "FidStats", "frechet_distance", "sliding_fid",
    "Lipreader", "lipscore", "load_lipreader", "save_lipreader", "train_lipreader",
    "NsvClassifier", "load_nsv", "nsv_accuracy", "save_nsv", "train_nsv_classifier",
    "EmotionRegressor", "emotion_accuracy", "load_emotion", "save_emotion",
    "train_emotion_regressor", "perturbation_harness",
]
