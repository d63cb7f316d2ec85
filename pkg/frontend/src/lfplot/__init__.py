"""Convergence-curve plotter for lfopt metrics CSV files."""

from .plotting import PlotSpec, SchemaError, render

__all__ = ["PlotSpec", "SchemaError", "render"]
__version__ = "0.1.0"
