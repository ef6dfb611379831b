"""QPSK source, FIR ISI channel, calibrated AWGN and seeded datasets.

Complex sequences are plain ``complex128`` numpy arrays; the real part is
the I rail and the imaginary part the Q rail.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

__all__ = [
    "PaddingMode",
    "ChannelSpec",
    "Dataset",
    "CHANNEL_PRESETS",
    "preset_channel",
    "as_complex",
    "qpsk_modulate",
    "qpsk_slice",
    "fir_convolve",
    "add_awgn",
    "scale_noise_to_snr",
    "realized_snr_db",
    "generate_dataset",
    "substream_seeds",
]


class PaddingMode(str, enum.Enum):
    CAUSAL = "causal"
    CENTERED = "centered"


# Non-minimum phase test channels h1, h2, h3.
CHANNEL_PRESETS = {
    "h1": np.array(
        [0.0545 + 0.05j, 0.2832 - 0.11971j, -0.7676 + 0.2788j, -0.0641 - 0.0576j, 0.0466 - 0.02275j]
    ),
    "h2": np.array([0.0554 + 0.0165j, -1.3449 - 0.4523j, 1.0067 + 1.1524j, 0.3476 + 0.3153j]),
    "h3": np.array(
        [
            0.0410 + 0.0109j,
            0.0495 + 0.0123j,
            0.0672 + 0.017j,
            0.0919 + 0.0235j,
            0.7920 + 0.1281j,
            0.396 + 0.0871j,
            0.2715 + 0.048j,
            0.2291 + 0.0415j,
            0.1287 + 0.0154j,
            0.1032 + 0.0119j,
        ]
    ),
}


def as_complex(x) -> np.ndarray:
    """Return ``x`` as a 1-D complex128 array."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise InvalidInputError(f"expected a 1-D sequence, got shape {arr.shape}")
    return arr


def _check_padding(mode: PaddingMode | str, length: int) -> PaddingMode:
    mode = PaddingMode(mode)
    if length < 1:
        raise InvalidInputError("filter must have at least one tap")
    if mode is PaddingMode.CENTERED and length % 2 == 0:
        raise InvalidConfigError(f"centered padding needs an odd tap count, got {length}")
    return mode


@dataclass(frozen=True)
class ChannelSpec:
    """Channel taps, total complex noise variance and padding convention."""

    taps: np.ndarray
    noise_variance: float = 0.0
    padding_mode: PaddingMode = PaddingMode.CENTERED

    def __post_init__(self):
        taps = as_complex(self.taps)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "padding_mode", _check_padding(self.padding_mode, taps.size))
        if not self.noise_variance >= 0:
            raise InvalidInputError("noise_variance must be non-negative")

    @property
    def length(self) -> int:
        return self.taps.size


def preset_channel(name: str, padding_mode: PaddingMode | str | None = None) -> ChannelSpec:
    """Look up ``h1``/``h2``/``h3``.

    Odd-length presets default to centered padding, even-length ones to
    causal padding.
    """
    try:
        taps = CHANNEL_PRESETS[name]
    except KeyError:
        raise InvalidConfigError(
            f"unknown channel {name!r}; presets are {', '.join(sorted(CHANNEL_PRESETS))}"
        ) from None
    if padding_mode is None:
        padding_mode = PaddingMode.CENTERED if taps.size % 2 else PaddingMode.CAUSAL
    return ChannelSpec(taps.copy(), 0.0, PaddingMode(padding_mode))


def qpsk_modulate(bits) -> np.ndarray:
    """Map bit pairs to QPSK symbols, 0 -> -1 and 1 -> +1 on each rail."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size % 2:
        raise InvalidInputError(f"QPSK needs an even number of bits, got {bits.size}")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise InvalidInputError("bits must be 0 or 1")
    b = bits.astype(np.float64)
    return (2.0 * b[0::2] - 1.0) + 1j * (2.0 * b[1::2] - 1.0)


def qpsk_slice(z) -> np.ndarray:
    """Hard QPSK decision per rail; a rail exactly at zero maps to +1."""
    z = as_complex(z)
    re = np.where(z.real >= 0, 1.0, -1.0)
    im = np.where(z.imag >= 0, 1.0, -1.0)
    return re + 1j * im


def qpsk_bits(symbols) -> np.ndarray:
    """Inverse of :func:`qpsk_modulate` after hard slicing."""
    s = qpsk_slice(symbols)
    out = np.empty(2 * s.size, dtype=np.int8)
    out[0::2] = s.real > 0
    out[1::2] = s.imag > 0
    return out


def tap_offset(length: int, mode: PaddingMode | str) -> int:
    """Index of tap h_0 inside a length-``length`` tap array."""
    mode = _check_padding(mode, length)
    return (length - 1) // 2 if mode is PaddingMode.CENTERED else 0


def fir_convolve(x, h, mode: PaddingMode | str = PaddingMode.CAUSAL) -> np.ndarray:
    """Length-preserving FIR filtering ``y_n = sum_k h[k] x[n + off - k]``.

    ``off`` is 0 for causal filtering (x is zero before index 0) and
    ``(M-1)/2`` for centered filtering, where the taps are read as
    ``h_{-(M-1)/2} .. h_{(M-1)/2}`` and x is zero-padded on both sides.
    """
    x = as_complex(x)
    h = as_complex(h)
    if x.size < 1:
        raise InvalidInputError("input sequence is empty")
    off = tap_offset(h.size, mode)
    full = np.convolve(x, h)
    return full[off : off + x.size]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def add_awgn(y, noise_variance: float, rng_seed) -> tuple[np.ndarray, np.ndarray]:
    """Add circular complex Gaussian noise of total variance ``noise_variance``.

    Each rail gets variance ``noise_variance / 2``. Returns ``(y + w, w)``.
    """
    y = as_complex(y)
    if not noise_variance >= 0:
        raise InvalidInputError(f"noise variance must be non-negative, got {noise_variance}")
    rng = _rng(rng_seed)
    std = np.sqrt(noise_variance / 2.0)
    w = std * rng.standard_normal(y.size) + 1j * (std * rng.standard_normal(y.size))
    return y + w, w


def realized_snr_db(signal, noise) -> float:
    return float(20.0 * np.log10(np.linalg.norm(signal) / np.linalg.norm(noise)))


def scale_noise_to_snr(signal, noise, snr_db: float) -> tuple[np.ndarray, float]:
    """Rescale ``noise`` so that ``20 log10(|signal| / |noise|)`` equals ``snr_db``.

    Returns the scaled noise and its implied total complex variance.
    """
    signal = as_complex(signal)
    noise = as_complex(noise)
    s_norm = np.linalg.norm(signal)
    w_norm = np.linalg.norm(noise)
    if s_norm == 0 or w_norm == 0:
        raise InvalidInputError("signal and noise must both have non-zero norm")
    target = s_norm / 10.0 ** (snr_db / 20.0)
    scaled = noise * (target / w_norm)
    return scaled, float(np.vdot(scaled, scaled).real / scaled.size)


@dataclass(frozen=True)
class Dataset:
    train_observed: np.ndarray
    test_symbols: np.ndarray
    test_observed: np.ndarray
    truth_train_symbols: np.ndarray
    realized_snr_db: float
    seed: int
    channel: ChannelSpec = field(repr=False, default=None)
    train_noise_variance: float = 0.0

    @property
    def train_len(self) -> int:
        return self.train_observed.size


def substream_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit seeds from ``seed`` via SeedSequence spawning."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _random_symbols(n: int, seed: int) -> np.ndarray:
    bits = _rng(seed).integers(0, 2, size=2 * n)
    return qpsk_modulate(bits)


def _observe(symbols, channel: ChannelSpec, snr_db: float, noise_seed: int):
    clean = fir_convolve(symbols, channel.taps, channel.padding_mode)
    _, w = add_awgn(clean, 1.0, noise_seed)
    w, sigma2 = scale_noise_to_snr(clean, w, snr_db)
    return clean + w, clean, w, sigma2


def generate_dataset(
    channel: ChannelSpec, train_len: int, snr_db: float, seed: int, test_len: int = 10_000
) -> Dataset:
    """Draw train and test streams through ``channel`` at ``snr_db``.

    Substreams spawned from ``seed``, in order: train symbols, test symbols,
    train noise, test noise. Noise is rescaled per realization so the
    realized SNR is exact for both streams.
    """
    if train_len < 1 or test_len < 1:
        raise InvalidInputError("train_len and test_len must be >= 1")
    s_train, s_test, n_train, n_test = substream_seeds(seed, 4)
    x_train = _random_symbols(train_len, s_train)
    x_test = _random_symbols(test_len, s_test)
    y_train, clean_train, w_train, sigma2 = _observe(x_train, channel, snr_db, n_train)
    y_test, _, _, _ = _observe(x_test, channel, snr_db, n_test)
    return Dataset(
        train_observed=y_train,
        test_symbols=x_test,
        test_observed=y_test,
        truth_train_symbols=x_train,
        realized_snr_db=realized_snr_db(clean_train, w_train),
        seed=seed,
        channel=channel,
        train_noise_variance=sigma2,
    )


def read_iq_file(path) -> np.ndarray:
    """Read ``re<TAB>im`` lines (any whitespace accepted) into a complex array.

    Blank lines and ``#`` comments are skipped. Raises
    :class:`InvalidInputError` naming the first malformed line.
    """
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                values.append(complex(float(parts[0]), float(parts[1])))
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: expected 're<TAB>im', got {line!r}") from None
    if not values:
        raise InvalidInputError(f"{path}: no samples")
    return np.asarray(values, dtype=np.complex128)


def write_iq_file(path, z) -> None:
    z = as_complex(z)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in z:
            fh.write(f"{float(v.real)!r}\t{float(v.imag)!r}\n")
