"""Offline figure generation for romance-lab CSV outputs."""

from .figures import (
    plot_budget_sweep,
    plot_distance_heatmap,
    plot_learning_curves,
    plot_quality_bars,
)
from .frames import MetricsFrame, SchemaError

__all__ = [
    "MetricsFrame",
    "SchemaError",
    "plot_budget_sweep",
    "plot_distance_heatmap",
    "plot_learning_curves",
    "plot_quality_bars",
]

__version__ = "0.1.0"
