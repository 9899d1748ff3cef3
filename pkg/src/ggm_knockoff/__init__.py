"""Gaussian graphical model edge selection with false discovery rate control
through partial-correlation knockoffs."""

from .errors import GGMError
from .estimator import (
    SelectionResult,
    TestMatrix,
    entry_statistics,
    estimate_graph,
    ko_plus_threshold,
    ko_threshold,
    make_knockoffs,
    partial_correlations,
    precision_to_partial,
    sequential_threshold_oracle,
)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "GGMError",
    "RngStream",
    "SelectionResult",
    "TestMatrix",
    "entry_statistics",
    "estimate_graph",
    "ko_plus_threshold",
    "ko_threshold",
    "make_knockoffs",
    "partial_correlations",
    "precision_to_partial",
    "sequential_threshold_oracle",
]
