"""Recursive product of spacings (RPS) goodness-of-fit testing."""

__version__ = "0.1.0"

from rpstest.kernels import (  # noqa: E402
    DegenerateSampleError,
    OrderedSample,
    edf_statistics,
    min_rps,
    pit_transform,
    rps_raw,
    rps_star,
    rss,
    spacing_statistics,
    spacings,
)

__all__ = [
    "DegenerateSampleError",
    "OrderedSample",
    "edf_statistics",
    "min_rps",
    "pit_transform",
    "rps_raw",
    "rps_star",
    "rss",
    "spacing_statistics",
    "spacings",
]
