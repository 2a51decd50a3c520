"""Pure plotting layer over the ellrisk experiment CSV schemas."""

from .plot import EmptyDataError, PlotSpec, SchemaError, plot, read_figure_csv

__all__ = ["EmptyDataError", "PlotSpec", "SchemaError", "plot", "read_figure_csv"]
