"""Batch figure generation from simulation sweep CSVs.

The package reads only the documented CSV schema (metadata lines starting
with '#', then a header row and data rows); it never runs simulations.
"""

from .figures import SchemaError, plot_se_overlay, plot_sweep, read_metric_csv

__all__ = [
    "SchemaError",
    "plot_se_overlay",
    "plot_sweep",
    "read_metric_csv",
]
