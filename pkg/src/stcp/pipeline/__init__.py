"""Configuration, data handling, preprocessing, summaries and the CLI."""

from .config import RunConfig, load_config, parse_support
from .io import IngestionError, load_grid_csv, read_trace, write_grid_csv, write_trace_csv
from .preprocess import (
    deseasonalize_monthly,
    detrend_significant,
    normalize_series,
    preprocess_field,
    zonal_mean,
)
from .summary import PosteriorSummary, calendar_label, summarize_posterior

__all__ = [
    "IngestionError", "PosteriorSummary", "RunConfig", "calendar_label", "deseasonalize_monthly",
    "detrend_significant", "load_config", "load_grid_csv", "normalize_series", "parse_support",
    "preprocess_field", "read_trace", "summarize_posterior", "write_grid_csv", "write_trace_csv",
    "zonal_mean",
]
