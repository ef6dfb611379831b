"""Reference linear equalizers: blind Godard CMA and supervised (N)LMS.

Both filter with a centered window, ``z_n = sum_k taps[k] y[n + c - k]`` with
``c = (T - 1) // 2``, so a trained equalizer is applied with
``fir_convolve(y, taps, CENTERED)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DivergenceError, InvalidConfigError, InvalidInputError
from .signal import PaddingMode, as_complex, fir_convolve, qpsk_slice

CMA_STEP = 1e-3
MMSE_STEP = 5e-2
QPSK_R2 = 2.0

slicer_qpsk = qpsk_slice


@dataclass(frozen=True)
class AdaptConfig:
    step_size: float = CMA_STEP
    passes: int = 50
    taps: int = 15
    normalize: bool = True
    cma_R2: float = QPSK_R2
    nlms_delta: float = 1e-6

    def __post_init__(self):
        if not self.step_size >= 0:
            raise InvalidConfigError("step_size must be non-negative")
        if self.passes < 1:
            raise InvalidConfigError("passes must be >= 1")
        if self.taps < 1 or self.taps % 2 == 0:
            raise InvalidConfigError(f"equalizer length must be odd and >= 1, got {self.taps}")


@dataclass
class LinearEqualizer:
    taps: np.ndarray

    def __post_init__(self):
        self.taps = as_complex(self.taps)
        if self.taps.size % 2 == 0:
            raise InvalidInputError("equalizer length must be odd")

    @property
    def center_index(self) -> int:
        return (self.taps.size - 1) // 2

    @classmethod
    def center_spike(cls, n_taps: int) -> LinearEqualizer:
        taps = np.zeros(n_taps, complex)
        taps[(n_taps - 1) // 2] = 1.0
        return cls(taps)


def equalize_apply(eq: LinearEqualizer, y) -> np.ndarray:
    return fir_convolve(y, eq.taps, PaddingMode.CENTERED)


def cma_cost(z, r2: float = QPSK_R2) -> float:
    z = as_complex(z)
    return float(np.mean((np.abs(z) ** 2 - r2) ** 2))


def cma_train(y, cfg: AdaptConfig, init: LinearEqualizer | None = None) -> LinearEqualizer:
    """Blind Godard (p=2) CMA, ``cfg.passes`` sweeps over ``y``."""
    y = as_complex(y)
    if y.size < cfg.taps:
        raise InvalidInputError(f"need at least {cfg.taps} samples, got {y.size}")
    taps = (init.taps if init is not None else LinearEqualizer.center_spike(cfg.taps).taps).copy()
    bad = kernels.cma_sweep(y, taps, float(cfg.step_size), float(cfg.cma_R2), int(cfg.passes))
    if bad >= 0:
        raise DivergenceError(f"CMA diverged at sample {bad}", int(bad))
    return LinearEqualizer(taps)


def mmse_lms_train(y, x_true, cfg: AdaptConfig, init: LinearEqualizer | None = None) -> LinearEqualizer:
    """Supervised (N)LMS equalizer trained against the transmitted symbols.

    The centered window already delays the filter by ``center_index``, so
    output ``n`` is regressed on ``x_true[n]``.
    """
    y = as_complex(y)
    x_true = as_complex(x_true)
    if y.size != x_true.size:
        raise InvalidInputError(f"length mismatch: {y.size} observations, {x_true.size} symbols")
    taps = (init.taps if init is not None else LinearEqualizer.center_spike(cfg.taps).taps).copy()
    bad = kernels.lms_sweep(
        y, x_true, taps, float(cfg.step_size), bool(cfg.normalize), float(cfg.nlms_delta), int(cfg.passes)
    )
    if bad >= 0:
        raise DivergenceError(f"LMS diverged at sample {bad}", int(bad))
    return LinearEqualizer(taps)


def wiener_solution(y, x_true, n_taps: int) -> LinearEqualizer:
    """Least-squares equalizer over the same centered windows as the LMS."""
    y = as_complex(y)
    wins = kernels._window_matrix(y, n_taps)
    taps, *_ = np.linalg.lstsq(wins, as_complex(x_true), rcond=None)
    return LinearEqualizer(taps)
