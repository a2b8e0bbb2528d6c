"""Attention-row extraction from local causal language models."""

from .extract import (
    ExtractorConfig,
    ExtractorError,
    ModelLoadFailure,
    SpanResolutionFailure,
    extract,
    extract_to_file,
)

__version__ = "0.1.0"
