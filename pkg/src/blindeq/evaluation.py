"""Ambiguity-aware SER, channel alignment distance and multi-trial experiments."""

from __future__ import annotations

import csv
import io
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import baselines, vae
from .errors import BlindEqError, InvalidInputError
from .signal import ChannelSpec, PaddingMode, as_complex, generate_dataset, qpsk_slice, substream_seeds

ROTATIONS = (1 + 0j, 1j, -1 + 0j, -1j)
ROTATION_DEG = (0, 90, 180, 270)
EQUALIZERS = ("vae", "cma", "mmse")

RESULT_HEADER = (
    "equalizer", "channel", "snr_db", "trial", "ser", "rotation_deg", "delay",
    "updates", "hhat_distance", "wall_time_s", "failed",
)
SUMMARY_HEADER = ("equalizer", "channel", "snr_db", "mean_ser", "median_ser", "trials", "failures")


@dataclass(frozen=True)
class AmbiguityResolution:
    rotation: int
    delay: int
    ser: float


def ser(estimated, truth) -> float:
    """Fraction of symbols where either rail differs."""
    estimated = as_complex(estimated)
    truth = as_complex(truth)
    if estimated.size != truth.size:
        raise InvalidInputError(f"length mismatch: {estimated.size} vs {truth.size}")
    if truth.size == 0:
        raise InvalidInputError("cannot compute SER of empty sequences")
    return float(np.count_nonzero(estimated != truth)) / truth.size


def _delay_order(max_delay: int):
    # 0, -1, 1, -2, 2, ... so the first strict minimum wins ties by |d|
    yield 0
    for d in range(1, max_delay + 1):
        yield -d
        yield d


def resolve_ambiguity(estimated, truth, max_delay: int) -> AmbiguityResolution:
    """Best rotation and delay explaining ``estimated`` as a rotated, shifted ``truth``.

    Hypothesis ``(r, d)`` means ``estimated[n] == r * truth[n - d]``; the SER
    of each hypothesis is taken over the overlapping samples. Ties go to the
    smallest ``|d|`` (negative before positive), then to rotation order 0, 90,
    180, 270 degrees.
    """
    est = as_complex(estimated)
    truth = as_complex(truth)
    if est.size != truth.size:
        raise InvalidInputError(f"length mismatch: {est.size} vs {truth.size}")
    if max_delay < 0:
        raise InvalidInputError("max_delay must be >= 0")
    n = truth.size
    if n - max_delay < 1:
        raise InvalidInputError(f"delay radius {max_delay} leaves no overlap for length {n}")
    best = None
    for d in _delay_order(max_delay):
        if d >= 0:
            e, t = est[d:], truth[: n - d]
        else:
            e, t = est[: n + d], truth[-d:]
        for deg, rot in zip(ROTATION_DEG, ROTATIONS):
            # conj(r) * est vs truth; rotations by multiples of 90 degrees are exact
            err = np.count_nonzero(e * np.conj(rot) != t) / t.size
            if best is None or err < best.ser:
                best = AmbiguityResolution(deg, d, float(err))
    return best


def channel_alignment_distance(h_true, h_est) -> float:
    """Normalized L2 distance after the best rotation and integer shift of ``h_est``."""
    h_true = as_complex(h_true)
    h_est = as_complex(h_est)
    m, k = h_true.size, h_est.size
    width = m + 2 * (k - 1)
    ref = np.zeros(width, complex)
    ref[k - 1 : k - 1 + m] = h_true
    ref_energy = np.vdot(h_true, h_true).real
    best = np.inf
    for shift in range(m + k - 1):
        placed = np.zeros(width, complex)
        placed[shift : shift + k] = h_est
        for rot in ROTATIONS:
            best = min(best, float(np.sum(np.abs(ref - rot * placed) ** 2)))
    return math.sqrt(best / ref_energy)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """One equalizer configuration in an experiment.

    ``label`` is what lands in the ``equalizer`` column; overrides left as
    ``None`` inherit from the experiment.
    """

    kind: str
    label: str
    train_len: int | None = None
    hhat_len: int | None = None
    subseq_len: int | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    channel: ChannelSpec
    channel_name: str
    snr_grid: Sequence[float]
    train_len: int = 2000
    trials: int = 20
    test_len: int = 10_000
    equalizers: Sequence[str] = EQUALIZERS
    seed: int = 0
    hhat_len: int | None = None
    subseq_len: int = 128
    variants: Sequence[Variant] | None = None
    vae_config: vae.TrainConfig = field(default_factory=vae.TrainConfig)
    adapt_config: baselines.AdaptConfig = field(default_factory=baselines.AdaptConfig)
    cma_step: float = baselines.CMA_STEP
    mmse_step: float = baselines.MMSE_STEP
    record_timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if not len(self.snr_grid):
            raise InvalidInputError("snr_grid is empty")
        for name in self.equalizers:
            if name not in EQUALIZERS:
                raise InvalidInputError(f"unknown equalizer {name!r}")

    def resolved_hhat_len(self) -> int:
        if self.hhat_len is not None:
            return self.hhat_len
        return default_hhat_len(self.channel.length, self.vae_config.padding_mode)

    def resolved_variants(self) -> list[Variant]:
        if self.variants is not None:
            return list(self.variants)
        return [Variant(kind, kind) for kind in self.equalizers]


def default_hhat_len(channel_len: int, padding_mode=PaddingMode.CENTERED) -> int:
    """Channel length, bumped to the next odd number under centered padding."""
    if PaddingMode(padding_mode) is PaddingMode.CENTERED and channel_len % 2 == 0:
        return channel_len + 1
    return channel_len


@dataclass(frozen=True)
class TrialResult:
    equalizer: str
    channel: str
    snr_db: float
    trial: int
    ser: float
    rotation: int | None = None
    delay: int | None = None
    updates_used: int | None = None
    hhat_distance: float | None = None
    wall_time: float | None = None
    failed: bool = False
    error: str = ""


def trial_seed(base_seed: int, channel_name: str, snr_db: float, train_len: int, trial: int) -> int:
    """Seed for one (cell, trial); independent of grid position and execution order."""
    key = f"{channel_name}|{float(snr_db)!r}|{int(train_len)}|{int(trial)}".encode()
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(zlib.crc32(key),))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_one(spec: ExperimentSpec, variant: Variant, snr_db: float, trial: int) -> TrialResult:
    train_len = variant.train_len or spec.train_len
    seed = trial_seed(spec.seed, spec.channel_name, snr_db, train_len, trial)
    ds = generate_dataset(spec.channel, train_len, snr_db, seed, spec.test_len)
    init_seed, = substream_seeds(seed ^ 0x5EED, 1)
    hhat_len = variant.hhat_len or spec.resolved_hhat_len()
    eq_len = spec.adapt_config.taps
    max_delay = max(hhat_len, eq_len)
    start = time.perf_counter()
    base = dict(equalizer=variant.label, channel=spec.channel_name, snr_db=float(snr_db), trial=trial)
    try:
        if variant.kind == "vae":
            cfg = replace(
                spec.vae_config,
                subseq_len=min(variant.subseq_len or spec.subseq_len, train_len),
                hhat_len=hhat_len,
                init_seed=init_seed,
            )
            params, hhat, report = vae.train(ds.train_observed, cfg)
            decided = vae.detect_symbols(vae.decoder_forward(params, ds.test_observed))
            extra = dict(
                updates_used=report.updates_used,
                hhat_distance=channel_alignment_distance(spec.channel.taps, hhat),
            )
        elif variant.kind == "cma":
            cfg = replace(spec.adapt_config, step_size=spec.cma_step, normalize=False)
            eq = baselines.cma_train(ds.train_observed, cfg)
            decided = qpsk_slice(baselines.equalize_apply(eq, ds.test_observed))
            extra = {}
        elif variant.kind == "mmse":
            cfg = replace(spec.adapt_config, step_size=spec.mmse_step, normalize=True)
            eq = baselines.mmse_lms_train(ds.train_observed, ds.truth_train_symbols, cfg)
            decided = qpsk_slice(baselines.equalize_apply(eq, ds.test_observed))
            extra = {}
        else:
            raise InvalidInputError(f"unknown equalizer kind {variant.kind!r}")
        res = resolve_ambiguity(decided, ds.test_symbols, max_delay)
    except BlindEqError as exc:
        return TrialResult(
            **base, ser=float("nan"), failed=True, error=str(exc),
            wall_time=time.perf_counter() - start,
        )
    return TrialResult(
        **base, ser=res.ser, rotation=res.rotation, delay=res.delay,
        wall_time=time.perf_counter() - start, **extra,
    )


def _sort_key(r: TrialResult, order: dict):
    return (order[r.equalizer], r.snr_db, r.trial)


def run_experiment(spec: ExperimentSpec, jobs: int = 1, progress=None) -> list[TrialResult]:
    """Run every (variant, snr, trial) cell; rows come back in canonical order."""
    variants = spec.resolved_variants()
    cells = [(v, snr, t) for v in variants for snr in spec.snr_grid for t in range(spec.trials)]

    def work(cell):
        out = _run_one(spec, *cell)
        if progress is not None:
            progress(out)
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(c) for c in cells]
    order = {v.label: i for i, v in enumerate(variants)}
    return sorted(rows, key=lambda r: _sort_key(r, order))


@dataclass(frozen=True)
class SummaryRow:
    equalizer: str
    channel: str
    snr_db: float
    mean_ser: float
    median_ser: float
    trials: int
    failures: int


def summarize(rows: Sequence[TrialResult]) -> list[SummaryRow]:
    """Mean and median SER per (equalizer, snr) cell; failed trials excluded."""
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.equalizer, r.channel, r.snr_db), []).append(r)
    out = []
    for (eq, ch, snr), group in cells.items():
        ok = [r.ser for r in group if not r.failed]
        out.append(
            SummaryRow(
                eq, ch, snr,
                float(np.mean(ok)) if ok else float("nan"),
                float(np.median(ok)) if ok else float("nan"),
                len(group),
                len(group) - len(ok),
            )
        )
    return out


def median_of(rows, attr: str = "ser", **match) -> float:
    vals = [
        getattr(r, attr)
        for r in rows
        if not r.failed and all(getattr(r, k) == v for k, v in match.items())
    ]
    return float(np.median(vals)) if vals else float("nan")


def _cell(value, fmt="{!r}"):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else fmt.format(value)
    return str(value)


def results_csv(rows: Sequence[TrialResult], record_timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in rows:
        w.writerow([
            r.equalizer, r.channel, _cell(r.snr_db), r.trial, _cell(r.ser), _cell(r.rotation),
            _cell(r.delay), _cell(r.updates_used), _cell(r.hhat_distance),
            _cell(r.wall_time, "{:.6f}") if record_timing else "", _cell(r.failed),
        ])
    return buf.getvalue()


def summary_csv(summary: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for s in summary:
        w.writerow([s.equalizer, s.channel, _cell(s.snr_db), _cell(s.mean_ser), _cell(s.median_ser), s.trials, s.failures])
    return buf.getvalue()
