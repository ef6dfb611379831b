"""Acceptance criteria, one test each, at the stated sizes and tolerances.

Each test records a PASS/FAIL line; ``conftest.py`` prints them at the end of
the session. Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from blindeq import cli, vae
from blindeq.evaluation import (
    EQUALIZERS,
    ExperimentSpec,
    Variant,
    median_of,
    resolve_ambiguity,
    run_experiment,
)
from blindeq.signal import PaddingMode, preset_channel, tap_offset
from blindeq.vae import DecoderParams, SymbolPosteriors

from oracles import QPSK, brute_force_ambiguity, central_diff, exhaustive_C, reference_loss

REPORT: list[str] = []
JOBS = 4
H1 = preset_channel("h1")
LOG2 = math.log(2.0)


def record(num: int, ok: bool, detail: str) -> None:
    REPORT.append(f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {detail}")


def crandn(rng, n, scale=1.0):
    return scale * (rng.normal(size=n) + 1j * rng.normal(size=n))


def h1_spec(**kw):
    return ExperimentSpec(channel=H1, channel_name="h1", **kw)


def test_c01_residual_matches_enumeration():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        mode = PaddingMode.CENTERED if m % 2 else PaddingMode.CAUSAL
        y, h = crandn(rng, n), crandn(rng, m, 0.8)
        q = SymbolPosteriors(rng.uniform(0.001, 0.999, n), rng.uniform(0.001, 0.999, n))
        got = vae.residual_term_C(y, h, q, mode)
        ref = exhaustive_C(y, h, q.qI, q.qQ, tap_offset(m, mode))
        worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed <= 60
    record(1, ok, f"C vs 4^N enumeration, 200 instances: max rel err {worst:.2e} (<= 1e-9), {elapsed:.1f}s (<= 60s)")
    assert ok


def test_c02_gradients_match_finite_differences():
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m = int(rng.choice([1, 3, 5, 7]))
        y = crandn(rng, 32)
        params, h = DecoderParams.random(rng, 0.5), crandn(rng, m, 0.5)
        _, gp, gh = vae.loss_gradients(y, params, h)
        g = vae.pack_params(gp, gh)
        fd = central_diff(lambda t: reference_loss(t, y, m, (m - 1) // 2), vae.pack_params(params, h), 1e-5)
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-12)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed <= 60
    record(2, ok, f"reverse-mode vs central FD, 100 instances N=32: max rel err {worst:.2e} (<= 1e-5), {elapsed:.1f}s")
    assert ok


def test_c03_sigma2_elimination():
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    misses = 0
    for _ in range(50):
        n = int(rng.integers(8, 65))
        y, h = crandn(rng, n), crandn(rng, 3, 0.7)
        q = SymbolPosteriors(rng.uniform(0.01, 0.99, n), rng.uniform(0.01, 0.99, n))
        br = vae.loss(y, h, q)
        star = br.C / n
        grid = np.linspace(star / 10, 10 * star, 1000)
        objective = [vae.full_objective(br.A, br.C, n, s) for s in grid]
        nearest = int(np.argmin(np.abs(grid - star)))
        misses += int(np.argmin(objective) != nearest)
    elapsed = time.perf_counter() - t0
    ok = misses == 0 and elapsed <= 10
    record(3, ok, f"-A-B over 1000-point sigma^2 grid minimized nearest C/N in {50 - misses}/50 instances, {elapsed:.2f}s")
    assert ok


def test_c04_kl_identities():
    checks = []
    for n in (1, 7, 128):
        uni = SymbolPosteriors(np.full(n, 0.5), np.full(n, 0.5))
        checks.append(vae.kl_term_A(uni) == 0.0)
        checks.append(vae.entropy_term(uni) == 2 * n * LOG2)
    worst_small = 0.0
    for n in (1, 2):
        det = SymbolPosteriors(np.arange(n) % 2 == 0, np.ones(n))
        worst_small = max(worst_small, abs(vae.kl_term_A(det) + 2 * n * LOG2))
    checks.append(worst_small <= 1e-5)
    big = SymbolPosteriors(np.arange(1000) % 2 == 0, np.zeros(1000))
    per_symbol = abs(vae.kl_term_A(big) + 2000 * LOG2) / 1000
    checks.append(per_symbol <= 1e-5)
    ok = all(checks)
    record(
        4, ok,
        f"A=0 and H=2N log2 exactly at q=1/2; |A+2N log2| = {worst_small:.1e} at clamped q (N<=2), "
        f"{per_symbol:.1e} per symbol at N=1000",
    )
    assert ok


def test_c05_vae_vs_baselines():
    t0 = time.perf_counter()
    fig3_rows = run_experiment(h1_spec(snr_grid=[4.0, 6.0, 8.0, 10.0], train_len=2000, trials=20), jobs=JOBS)
    elapsed = time.perf_counter() - t0
    med = {(e, s): median_of(fig3_rows, equalizer=e, snr_db=s) for e in EQUALIZERS for s in (4.0, 6.0, 8.0, 10.0)}
    beats_cma = all(med["vae", s] < med["cma", s] for s in (4.0, 6.0, 8.0, 10.0))
    near_mmse = all(med["vae", s] <= 3 * med["mmse", s] for s in (8.0, 10.0))
    ok = beats_cma and near_mmse and elapsed <= 1800
    cells = ", ".join(f"{s:g}dB vae/cma/mmse={med['vae', s]:.4f}/{med['cma', s]:.4f}/{med['mmse', s]:.4f}" for s in (4.0, 6.0, 8.0, 10.0))
    record(5, ok, f"median SER h1 L=2000 x20: {cells}; {elapsed:.0f}s")
    assert ok


def test_c06_training_length_trend():
    sizes = (50, 200, 1000, 5000)
    variants = [Variant(k, f"{k}/L={n}", train_len=n, subseq_len=min(128, n)) for k in ("vae", "cma") for n in sizes]
    rows = run_experiment(h1_spec(snr_grid=[10.0], trials=20, variants=variants), jobs=JOBS)
    v = [median_of(rows, equalizer=f"vae/L={n}") for n in sizes]
    c = [median_of(rows, equalizer=f"cma/L={n}") for n in sizes]
    ok = all(b <= a for a, b in zip(v, v[1:])) and all(x < y for x, y in zip(v, c))
    record(6, ok, "median SER h1 10dB, L=" + ", ".join(f"{n}: vae {a:.4f} cma {b:.4f}" for n, a, b in zip(sizes, v, c)))
    assert ok


# frozen after the first verified run (observed median 0.042 at length 5)
ALIGNMENT_THRESHOLD = 0.15


def test_c07_hhat_length_robustness():
    variants = [Variant("vae", f"vae/hhat={n}", hhat_len=n) for n in (5, 9)]
    rows = run_experiment(h1_spec(snr_grid=[10.0], trials=20, variants=variants), jobs=JOBS)
    s5, s9 = (median_of(rows, equalizer=f"vae/hhat={n}") for n in (5, 9))
    d5 = median_of(rows, "hhat_distance", equalizer="vae/hhat=5")
    ok = s9 <= 2 * s5 and d5 <= ALIGNMENT_THRESHOLD
    record(7, ok, f"median SER hhat 5: {s5:.4f}, 9: {s9:.4f} (<= 2x); median alignment distance {d5:.3f} (<= {ALIGNMENT_THRESHOLD})")
    assert ok


def test_c08_convergence_trend():
    snrs = [2.0, 4.0, 6.0, 8.0, 10.0]
    variants = [Variant("vae", f"vae/N={n}", subseq_len=n) for n in (10, 128)]
    rows = run_experiment(h1_spec(snr_grid=snrs, trials=20, variants=variants), jobs=JOBS)
    u = {n: [median_of(rows, "updates_used", equalizer=f"vae/N={n}", snr_db=s) for s in snrs] for n in (10, 128)}
    trend = all(b <= a for a, b in zip(u[128], u[128][1:])) and u[128][-1] < u[128][0]
    faster = all(u[128][i] < u[10][i] for i, s in enumerate(snrs) if s >= 4)
    ok = trend and faster
    record(8, ok, f"median updates 2..10dB: N=128 {[int(x) for x in u[128]]}, N=10 {[int(x) for x in u[10]]}")
    assert ok


def test_c09_rerun_determinism(tmp_path):
    small = ["--trials", "3", "--test-len", "1000"]
    commands = [
        ["ser-vs-snr", "--snr", "2:10:4", *small],
        ["ser-vs-train", "--sizes", "50,500", *small],
        ["hhat-robustness", "--lengths", "5,9", "--snr", "6", *small],
        ["convergence", "--subseq", "10,128", "--snr", "4,8", *small],
    ]
    mismatches = []
    for i, argv in enumerate(commands):
        first = tmp_path / f"run{i}"
        assert cli.main([*argv, "--out", str(first)]) == 0
        for jobs in (1, 4):
            again = tmp_path / f"run{i}_j{jobs}"
            assert cli.main(["rerun", str(first / "manifest"), "--out", str(again), "--jobs", str(jobs)]) == 0
            for name in ("results.csv", "results_summary.csv"):
                if (first / name).read_bytes() != (again / name).read_bytes():
                    mismatches.append(f"{argv[0]}:{name}:jobs={jobs}")
    ok = not mismatches
    record(9, ok, f"4 experiment commands re-run from manifest at jobs 1 and 4: {len(mismatches)} CSV mismatches")
    assert ok


def test_c10_ambiguity_brute_force():
    rng = np.random.default_rng(110)
    mismatches = 0
    rots = (1, 1j, -1, -1j)
    for _ in range(1000):
        n = int(rng.integers(2, 16))
        radius = int(rng.integers(0, min(5, n)))
        truth = QPSK[rng.integers(0, 4, n)]
        est = rots[rng.integers(4)] * np.roll(truth, int(rng.integers(-radius, radius + 1)))
        noisy = rng.random(n) < rng.uniform(0, 0.6)
        est[noisy] = QPSK[rng.integers(0, 4, int(noisy.sum()))]
        got = resolve_ambiguity(est, truth, radius)
        mismatches += (got.rotation, got.delay, got.ser) != brute_force_ambiguity(est, truth, radius)
    ok = mismatches == 0
    record(10, ok, f"resolve_ambiguity vs brute force on 1000 instances: {mismatches} mismatches")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
