"""Label-consistent sparse dictionary learning with Top-K LISTA and FISTA encoders."""
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    LCSparseError,
    NumericalError,
)
from .model import EncoderKind, HyperParams, ModelState, SupervisionTargets, build_targets

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "EncoderKind",
    "HyperParams",
    "LCSparseError",
    "ModelState",
    "NumericalError",
    "SupervisionTargets",
    "build_targets",
]
