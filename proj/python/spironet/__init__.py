"""Python access to the spironet C++ core: FFT, metrics, synthetic data and the network."""

from ._core import (
    CheckpointError,
    ConfigError,
    Confusion,
    DataError,
    Net,
    ShapeError,
    confusion,
    generate_sample,
    irfft2,
    metrics,
    read_pgm,
    rfft2,
    variants,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Confusion",
    "DataError",
    "Net",
    "ShapeError",
    "confusion",
    "generate_sample",
    "irfft2",
    "metrics",
    "read_pgm",
    "rfft2",
    "variants",
]
