"""Blind channel equalization with a variational autoencoder, plus CMA and LMS baselines."""

from ._accel import BACKEND
from .errors import BlindEqError, DivergenceError, InvalidConfigError, InvalidInputError

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlindEqError",
    "DivergenceError",
    "InvalidConfigError",
    "InvalidInputError",
    "__version__",
]
