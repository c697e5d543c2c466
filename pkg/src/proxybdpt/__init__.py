"""Bidirectional path tracing with proxy sampling and unbiased reciprocal estimation."""

__version__ = "0.1.0"
