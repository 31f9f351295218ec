"""Learning stack: standardizer, MLP classifier, cross-validation, isolation forest."""

from .iforest import IsolationForest, average_path_length
from .mlp import MLPClassifier
from .model_selection import TUNING_GRID, CVResult, GridResult, cross_validate, expand_grid, grid_search, stratified_folds
from .preprocessing import Standardizer

__all__ = [
    "TUNING_GRID",
    "CVResult",
    "GridResult",
    "IsolationForest",
    "MLPClassifier",
    "Standardizer",
    "average_path_length",
    "cross_validate",
    "expand_grid",
    "grid_search",
    "stratified_folds",
]
