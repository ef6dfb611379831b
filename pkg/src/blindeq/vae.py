"""Variational-autoencoder blind equalizer.

The inference network (``decoder``) maps the observed block ``y`` to
independent Bernoulli posteriors on the I and Q bits of every symbol; the
generative side is the linear channel estimate ``hhat``. Training minimizes
``N log C - A``, the negative evidence lower bound with the noise variance
profiled out at ``C / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidConfigError, InvalidInputError
from .signal import PaddingMode, as_complex, fir_convolve, tap_offset

EPS_Q = kernels.EPS_Q
EPS_C = kernels.EPS_C
CONV1_LEN = kernels.CONV1_LEN
CONV2_LEN = kernels.CONV2_LEN


@dataclass
class DecoderParams:
    conv1: np.ndarray
    bias1: complex
    conv2: np.ndarray
    bias2: complex

    def __post_init__(self):
        self.conv1 = as_complex(self.conv1)
        self.conv2 = as_complex(self.conv2)
        self.bias1 = complex(self.bias1)
        self.bias2 = complex(self.bias2)
        if self.conv1.size != CONV1_LEN or self.conv2.size != CONV2_LEN:
            raise InvalidInputError(
                f"decoder filters must have {CONV1_LEN} and {CONV2_LEN} taps, "
                f"got {self.conv1.size} and {self.conv2.size}"
            )

    @classmethod
    def zeros(cls) -> DecoderParams:
        return cls(np.zeros(CONV1_LEN, complex), 0j, np.zeros(CONV2_LEN, complex), 0j)

    @classmethod
    def random(cls, rng: np.random.Generator, std: float = 0.05) -> DecoderParams:
        def cgauss(n):
            return std * rng.standard_normal(n) + 1j * std * rng.standard_normal(n)

        return cls(cgauss(CONV1_LEN), 0j, cgauss(CONV2_LEN), 0j)

    @property
    def n_filter_coefficients(self) -> int:
        """Real filter coefficients, biases excluded (always 14)."""
        return 2 * (self.conv1.size + self.conv2.size)

    @property
    def n_bias_coefficients(self) -> int:
        return 4


@dataclass(frozen=True)
class SymbolPosteriors:
    """P(x_j^I = +1 | y) and P(x_j^Q = +1 | y), clamped to [EPS_Q, 1 - EPS_Q]."""

    qI: np.ndarray
    qQ: np.ndarray

    def __post_init__(self):
        qi = np.clip(np.asarray(self.qI, dtype=np.float64), EPS_Q, 1 - EPS_Q)
        qq = np.clip(np.asarray(self.qQ, dtype=np.float64), EPS_Q, 1 - EPS_Q)
        if qi.shape != qq.shape or qi.ndim != 1:
            raise InvalidInputError("qI and qQ must be 1-D and of equal length")
        object.__setattr__(self, "qI", qi)
        object.__setattr__(self, "qQ", qq)

    def __len__(self):
        return self.qI.size

    @property
    def mean(self) -> np.ndarray:
        """Posterior mean of each symbol."""
        return (2 * self.qI - 1) + 1j * (2 * self.qQ - 1)

    @property
    def variance(self) -> np.ndarray:
        """E|x_k|^2 - |E x_k|^2 = 2 - |m_k|^2."""
        return 4 * self.qI * (1 - self.qI) + 4 * self.qQ * (1 - self.qQ)


@dataclass(frozen=True)
class LossBreakdown:
    A: float
    C: float
    loss: float
    sigma2_hat: float


# ---------------------------------------------------------------------------
# parameter packing
# ---------------------------------------------------------------------------


def pack_params(params: DecoderParams, hhat) -> np.ndarray:
    """Flatten into the interleaved float64 layout used by the kernels."""
    hhat = as_complex(hhat)
    p = np.concatenate([params.conv1, [params.bias1], params.conv2, [params.bias2], hhat])
    return p.view(np.float64).copy()


def unpack_params(theta: np.ndarray) -> tuple[DecoderParams, np.ndarray]:
    p = np.asarray(theta, dtype=np.float64).view(np.complex128)
    n1 = CONV1_LEN
    params = DecoderParams(p[:n1].copy(), p[n1], p[n1 + 1 : n1 + 1 + CONV2_LEN].copy(), p[n1 + 1 + CONV2_LEN])
    return params, p[kernels.N_DECODER :].copy()


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def softsign(x):
    return x / (np.abs(x) + 1.0)


def _sigmoid(x):
    return kernels._sigmoid_np(np.asarray(x, dtype=np.float64))


def complex_conv1d(x, taps, bias: complex = 0j) -> np.ndarray:
    """Complex filtering of a two-rail signal with same-length output.

    ``out[n] = sum_k taps[k] x[n + (K-1)//2 - k] + bias``; in rail form
    ``out_I = x_I*f_I - x_Q*f_Q + b_I`` and ``out_Q = x_I*f_Q + x_Q*f_I + b_Q``.
    """
    x = as_complex(x)
    taps = as_complex(taps)
    if taps.size > x.size:
        raise InvalidInputError(f"filter of length {taps.size} is longer than input of length {x.size}")
    off = (taps.size - 1) // 2
    return np.convolve(x, taps)[off : off + x.size] + bias


def decoder_forward(params: DecoderParams, y) -> SymbolPosteriors:
    y = as_complex(y)
    if y.size < CONV1_LEN:
        raise InvalidInputError(f"decoder needs at least {CONV1_LEN} samples, got {y.size}")
    a = complex_conv1d(y, params.conv1, params.bias1)
    r = softsign(a.real) + 1j * softsign(a.imag) + y
    z = complex_conv1d(r, params.conv2, params.bias2)
    return SymbolPosteriors(_sigmoid(z.real), _sigmoid(z.imag))


def detect_symbols(q: SymbolPosteriors) -> np.ndarray:
    """Hard decisions; a posterior of exactly 0.5 maps to +1."""
    re = np.where(2 * q.qI - 1 >= 0, 1.0, -1.0)
    im = np.where(2 * q.qQ - 1 >= 0, 1.0, -1.0)
    return re + 1j * im


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def entropy_term(q: SymbolPosteriors) -> float:
    """Entropy of the factorized posterior in nats."""

    def h(p):
        return -p * np.log(p) - (1 - p) * np.log(1 - p)

    return float(np.sum(h(q.qI)) + np.sum(h(q.qQ)))


def kl_term_A(q: SymbolPosteriors) -> float:
    """Negative KL divergence to the uniform QPSK prior; always <= 0."""
    return -2 * len(q) * math.log(2.0) + entropy_term(q)


def residual_term_C(y, hhat, q: SymbolPosteriors, padding_mode=PaddingMode.CENTERED) -> float:
    """Posterior expectation of ``||y - x * hhat||^2`` in closed form.

    ``C = sum_n |y_n - s_n|^2 + sum_n sum_k |hhat_{n-k}|^2 (2 - |m_k|^2)``
    with ``m`` the posterior mean sequence and ``s = m * hhat``.
    """
    y = as_complex(y)
    hhat = as_complex(hhat)
    if y.size != len(q):
        raise InvalidInputError(f"y has {y.size} samples but q has {len(q)}")
    m = q.mean
    s = fir_convolve(m, hhat, padding_mode)
    h2 = np.abs(hhat) ** 2
    spread = fir_convolve(q.variance, h2, padding_mode).real
    return float(np.sum(np.abs(y - s) ** 2) + np.sum(spread))


def loss(y, hhat, q: SymbolPosteriors, padding_mode=PaddingMode.CENTERED) -> LossBreakdown:
    n = len(q)
    c = residual_term_C(y, hhat, q, padding_mode)
    a = kl_term_A(q)
    return LossBreakdown(A=a, C=c, loss=n * math.log(max(c, EPS_C)) - a, sigma2_hat=c / n)


def full_objective(A: float, C: float, n: int, sigma2: float) -> float:
    """``-A - B`` with the noise variance left free (constants kept)."""
    b = -n * math.log(math.pi) - n * math.log(sigma2) - C / sigma2
    return -A - b


def loss_gradients(y, params: DecoderParams, hhat, padding_mode=PaddingMode.CENTERED):
    """Exact reverse-mode gradient of the loss.

    Returns ``(LossBreakdown, DecoderParams-shaped gradient, hhat gradient)``.
    Complex entries hold ``dL/dRe + 1j dL/dIm``.
    """
    y = as_complex(y)
    hhat = as_complex(hhat)
    theta = pack_params(params, hhat)
    value, a, c, g = kernels.loss_grad(y, theta, tap_offset(hhat.size, padding_mode), True)
    g_params, g_h = unpack_params(g)
    return LossBreakdown(A=a, C=c, loss=value, sigma2_hat=c / y.size), g_params, g_h


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0, **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Apply one bias-corrected Adam update; mutates ``state`` and returns new params."""
    params = np.array(params, dtype=np.float64, copy=True)
    state.t += 1
    kernels.adam_update(
        params, np.asarray(grad, dtype=np.float64), state.m, state.v,
        state.t, state.lr, state.beta1, state.beta2, state.eps,
    )
    return params


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


STOP_RULES = {"loss": kernels.STOP_LOSS, "decisions": kernels.STOP_DECISIONS}


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters.

    ``stop_rule="decisions"`` (default) declares convergence once fewer than
    ``flip_tol`` of the hard decisions on the first ``monitor_len`` training
    samples changed over the last ``patience_window`` updates, checked every
    ``check_every`` updates. ``stop_rule="loss"`` stops when the mean loss
    of consecutive ``patience_window`` blocks improves by less than
    ``rel_tol`` relative.
    """

    subseq_len: int = 128
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_updates: int = 100_000
    patience_window: int = 200
    rel_tol: float = 1e-4
    hhat_len: int = 5
    padding_mode: PaddingMode = PaddingMode.CENTERED
    init_seed: int = 0
    decoder_init_std: float = 0.05
    hhat_init_std: float = 0.01
    stop_rule: str = "decisions"
    check_every: int = 50
    flip_tol: float = 0.03
    monitor_len: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "padding_mode", PaddingMode(self.padding_mode))
        if self.stop_rule not in STOP_RULES:
            raise InvalidConfigError(f"stop_rule must be one of {sorted(STOP_RULES)}, got {self.stop_rule!r}")
        if self.check_every < 1 or self.patience_window % self.check_every:
            raise InvalidConfigError("patience_window must be a positive multiple of check_every")
        if self.hhat_len < 1:
            raise InvalidConfigError("hhat_len must be >= 1")
        if self.padding_mode is PaddingMode.CENTERED and self.hhat_len % 2 == 0:
            raise InvalidConfigError(f"centered padding needs an odd hhat_len, got {self.hhat_len}")
        if self.subseq_len < max(self.hhat_len, CONV1_LEN):
            raise InvalidConfigError(
                f"subseq_len {self.subseq_len} must be >= hhat_len ({self.hhat_len}) and >= {CONV1_LEN}"
            )
        if self.max_updates < 1 or self.patience_window < 1:
            raise InvalidConfigError("max_updates and patience_window must be >= 1")


@dataclass
class TrainReport:
    updates_used: int
    loss_trace: np.ndarray = field(repr=False)
    converged: bool
    hhat: np.ndarray
    sigma2_hat: float


def initial_state(cfg: TrainConfig) -> tuple[DecoderParams, np.ndarray, np.random.Generator]:
    """Near-identity start: impulse hhat plus small noise, small random decoder."""
    rng = np.random.Generator(np.random.PCG64(cfg.init_seed))
    params = DecoderParams.random(rng, cfg.decoder_init_std)
    hhat = np.zeros(cfg.hhat_len, complex)
    hhat[tap_offset(cfg.hhat_len, cfg.padding_mode)] = 1.0
    hhat += cfg.hhat_init_std * (rng.standard_normal(cfg.hhat_len) + 1j * rng.standard_normal(cfg.hhat_len))
    return params, hhat, rng


def train(train_observed, cfg: TrainConfig) -> tuple[DecoderParams, np.ndarray, TrainReport]:
    """Jointly fit the decoder and ``hhat`` with Adam on random sub-sequences.

    Each update uses one contiguous block of length ``min(cfg.subseq_len, L)``
    drawn uniformly from the training sequence.
    """
    y = as_complex(train_observed)
    if y.size < 1:
        raise InvalidInputError("training sequence is empty")
    n_sub = min(cfg.subseq_len, y.size)
    if n_sub < max(cfg.hhat_len, CONV1_LEN):
        raise InvalidConfigError(
            f"training block of {n_sub} samples is shorter than hhat ({cfg.hhat_len}) or conv1 ({CONV1_LEN})"
        )
    params, hhat, rng = initial_state(cfg)
    starts = rng.integers(0, y.size - n_sub + 1, size=cfg.max_updates).astype(np.int64)
    theta = pack_params(params, hhat)
    trace = np.empty(cfg.max_updates)
    h_off = tap_offset(cfg.hhat_len, cfg.padding_mode)
    monitor = y[: min(cfg.monitor_len, y.size)].copy()
    used, converged, theta = kernels.train_loop(
        y, theta, starts, n_sub, h_off,
        cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
        cfg.patience_window, cfg.rel_tol, STOP_RULES[cfg.stop_rule],
        cfg.check_every, cfg.flip_tol, monitor, trace,
    )
    params, hhat = unpack_params(theta)
    # noise estimate on the whole training sequence
    sigma2 = loss(y, hhat, decoder_forward(params, y), cfg.padding_mode).sigma2_hat
    report = TrainReport(int(used), trace[: int(used)].copy(), bool(converged), hhat, sigma2)
    return params, hhat, report


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(values) -> str:
    z = np.atleast_1d(as_complex(np.atleast_1d(values)))
    return " ".join(f"{float(v.real)!r} {float(v.imag)!r}" for v in z)


def dump_params(params: DecoderParams, hhat, path=None, **extra) -> str:
    """Flat ``name = re im re im ...`` text; returns the text and writes it if ``path`` is given."""
    lines = [
        f"conv1 = {_fmt(params.conv1)}",
        f"bias1 = {_fmt(params.bias1)}",
        f"conv2 = {_fmt(params.conv2)}",
        f"bias2 = {_fmt(params.bias2)}",
        f"hhat = {_fmt(hhat)}",
    ]
    lines += [f"{k} = {v!r}" for k, v in extra.items()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def load_params(text: str) -> tuple[DecoderParams, np.ndarray, dict]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition("=")
        if not sep:
            raise InvalidInputError(f"line {lineno}: expected 'name = values'")
        entries[key.strip()] = [float(v) for v in rest.split()]

    def cplx(key):
        vals = np.asarray(entries.pop(key), dtype=np.float64)
        if vals.size % 2:
            raise InvalidInputError(f"{key}: odd number of I/Q values")
        return vals.view(np.complex128)

    try:
        params = DecoderParams(cplx("conv1"), cplx("bias1")[0], cplx("conv2"), cplx("bias2")[0])
        hhat = cplx("hhat").copy()
    except KeyError as exc:
        raise InvalidInputError(f"missing entry {exc}") from None
    extra = {k: (v[0] if len(v) == 1 else v) for k, v in entries.items()}
    return params, hhat, extra
