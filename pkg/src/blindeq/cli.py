"""Command-line driver: datasets, single-shot equalization and the SER experiments.

Every subcommand writes its outputs plus a JSON ``manifest`` into ``--out``
(default: ``$BLINDEQ_OUTPUT_DIR`` or ``./results``). ``blindeq rerun
MANIFEST`` replays a run; the CSV outputs are byte-identical.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, baselines, evaluation, vae
from ._accel import BACKEND
from .errors import BlindEqError, InvalidConfigError, InvalidInputError
from .signal import (
    CHANNEL_PRESETS,
    ChannelSpec,
    PaddingMode,
    generate_dataset,
    preset_channel,
    read_iq_file,
    write_iq_file,
)

log = logging.getLogger("blindeq")

OUTPUT_DIR_ENV = "BLINDEQ_OUTPUT_DIR"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive), a single value, or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise UsageError(f"grid {text!r} needs step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise UsageError("empty grid")
    return values


def parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError(f"{what}: list is empty")
    return values


def resolve_channel(name: str) -> tuple[ChannelSpec, str]:
    if name in CHANNEL_PRESETS:
        return preset_channel(name), name
    path = Path(name)
    if not path.is_file():
        raise UsageError(
            f"unknown channel {name!r}: use a preset ({', '.join(sorted(CHANNEL_PRESETS))}) or a tap file"
        )
    taps = read_iq_file(path)
    mode = PaddingMode.CENTERED if taps.size % 2 else PaddingMode.CAUSAL
    return ChannelSpec(taps, 0.0, mode), path.stem


def _common(p: argparse.ArgumentParser, snr_default: str, train_default: int = 2000):
    p.add_argument("--channel", default="h1", help="preset name (h1, h2, h3) or tap file")
    p.add_argument("--snr", default=snr_default, help="SNR grid in dB, start:stop:step or list")
    p.add_argument("--train", type=int, default=train_default, help="training symbols L")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--test-len", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_DIR_ENV} or ./results)")
    p.add_argument("--timing", action="store_true", help="fill wall_time_s (makes CSVs non-reproducible)")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-updates", type=int, default=100_000)
    p.add_argument("--stop-rule", choices=sorted(vae.STOP_RULES), default="decisions")
    p.add_argument("--eq-taps", type=int, default=15)
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--cma-step", type=float, default=baselines.CMA_STEP)
    p.add_argument("--mmse-step", type=float, default=baselines.MMSE_STEP)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindeq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"blindeq {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded train/test dataset as I/Q text files")
    p.add_argument("--channel", default="h1")
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--test-len", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ser-vs-snr", help="SER against SNR for each equalizer")
    _common(p, "0:10:1")
    p.add_argument("--equalizers", default="vae,cma,mmse")
    p.add_argument("--hhat-len", type=int, default=None)
    p.add_argument("--subseq", type=int, default=128)

    p = sub.add_parser("ser-vs-train", help="SER against the number of training symbols")
    _common(p, "10")
    p.add_argument("--sizes", default="50,200,1000,5000", help="training lengths L")
    p.add_argument("--equalizers", default="vae,cma,mmse")
    p.add_argument("--hhat-len", type=int, default=None)

    p = sub.add_parser("hhat-robustness", help="VAE SER for several channel-estimate lengths")
    _common(p, "0:10:2")
    p.add_argument("--lengths", default=None, help="hhat lengths (default M and 2M-1)")
    p.add_argument("--subseq", type=int, default=128)

    p = sub.add_parser("convergence", help="VAE parameter updates until convergence")
    _common(p, "0:10:2")
    p.add_argument("--subseq", default="10,128", help="sub-sequence lengths N")
    p.add_argument("--hhat-len", type=int, default=None)

    p = sub.add_parser("equalize", help="blindly equalize an I/Q text file with the VAE")
    p.add_argument("input", help="file with one 're<TAB>im' sample per line")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hhat-len", type=int, default=5)
    p.add_argument("--subseq", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-updates", type=int, default=100_000)
    p.add_argument("--stop-rule", choices=sorted(vae.STOP_RULES), default="decisions")

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    p.add_argument("--jobs", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------
# experiment plumbing
# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "results"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _spec_from_args(args, channel: ChannelSpec, channel_name: str, snr_grid, variants, **over) -> evaluation.ExperimentSpec:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return evaluation.ExperimentSpec(
        channel=channel,
        channel_name=channel_name,
        snr_grid=snr_grid,
        train_len=args.train,
        trials=args.trials,
        test_len=args.test_len,
        seed=args.seed,
        variants=variants,
        vae_config=vae.TrainConfig(
            learning_rate=args.lr, max_updates=args.max_updates, stop_rule=args.stop_rule
        ),
        adapt_config=baselines.AdaptConfig(taps=args.eq_taps, passes=args.passes),
        cma_step=args.cma_step,
        mmse_step=args.mmse_step,
        record_timing=args.timing,
        **over,
    )


def _check_hhat(length: int, subseq: int | None = None):
    if length < 1 or length % 2 == 0:
        raise UsageError(f"hhat length {length} must be odd and >= 1 with centered padding")
    if subseq is not None and subseq < max(length, vae.CONV1_LEN):
        raise UsageError(f"sub-sequence length {subseq} must be >= hhat length {length} and >= {vae.CONV1_LEN}")


def _variants_for(names: str) -> list[str]:
    kinds = [n.strip() for n in names.split(",") if n.strip()]
    for k in kinds:
        if k not in evaluation.EQUALIZERS:
            raise UsageError(f"unknown equalizer {k!r}; choose from {', '.join(evaluation.EQUALIZERS)}")
    if not kinds:
        raise UsageError("no equalizers selected")
    return kinds


def _plan(args) -> tuple[evaluation.ExperimentSpec, dict]:
    """Translate parsed arguments into an experiment and its resolved config."""
    channel, channel_name = resolve_channel(args.channel)
    snr_grid = parse_grid(args.snr)
    resolved: dict = {}
    if args.command == "ser-vs-snr":
        kinds = _variants_for(args.equalizers)
        hhat = args.hhat_len or evaluation.default_hhat_len(channel.length)
        subseq = min(args.subseq, args.train)
        _check_hhat(hhat, subseq)
        variants = [evaluation.Variant(k, k) for k in kinds]
        spec = _spec_from_args(args, channel, channel_name, snr_grid, variants, hhat_len=hhat, subseq_len=subseq)
        resolved.update(hhat_len=hhat, subseq_len=subseq, equalizers=kinds)
    elif args.command == "ser-vs-train":
        kinds = _variants_for(args.equalizers)
        sizes = parse_int_list(args.sizes, "--sizes")
        hhat = args.hhat_len or evaluation.default_hhat_len(channel.length)
        subseq_by_size = {}
        for L in sizes:
            if L < 1:
                raise UsageError(f"training size {L} must be >= 1")
            subseq_by_size[str(L)] = min(128, L)
            _check_hhat(hhat, min(128, L))
            if "cma" in kinds or "mmse" in kinds:
                if L < args.eq_taps:
                    raise UsageError(f"training size {L} is shorter than the {args.eq_taps}-tap equalizer")
        variants = [
            evaluation.Variant(k, f"{k}/L={L}", train_len=L, subseq_len=min(128, L))
            for k in kinds for L in sizes
        ]
        spec = _spec_from_args(args, channel, channel_name, snr_grid, variants, hhat_len=hhat)
        resolved.update(hhat_len=hhat, sizes=sizes, subseq_len=subseq_by_size, equalizers=kinds)
    elif args.command == "hhat-robustness":
        m = channel.length
        lengths = parse_int_list(args.lengths, "--lengths") if args.lengths else [
            evaluation.default_hhat_len(m), evaluation.default_hhat_len(2 * m - 1)
        ]
        subseq = min(args.subseq, args.train)
        for n in lengths:
            _check_hhat(n, subseq)
        variants = [evaluation.Variant("vae", f"vae/hhat={n}", hhat_len=n) for n in lengths]
        spec = _spec_from_args(args, channel, channel_name, snr_grid, variants, subseq_len=subseq)
        resolved.update(lengths=lengths, subseq_len=subseq)
    elif args.command == "convergence":
        subseqs = parse_int_list(args.subseq, "--subseq")
        hhat = args.hhat_len or evaluation.default_hhat_len(channel.length)
        for n in subseqs:
            if n < 1:
                raise UsageError(f"--subseq values must be >= 1, got {n}")
            _check_hhat(hhat, min(n, args.train))
        variants = [
            evaluation.Variant("vae", f"vae/N={n}", subseq_len=min(n, args.train)) for n in subseqs
        ]
        spec = _spec_from_args(args, channel, channel_name, snr_grid, variants, hhat_len=hhat)
        resolved.update(hhat_len=hhat, subseq=subseqs)
    else:  # pragma: no cover
        raise UsageError(f"unknown command {args.command}")
    resolved.update(
        channel=args.channel, channel_taps=[[float(t.real), float(t.imag)] for t in channel.taps],
        padding_mode=channel.padding_mode.value, snr_grid=snr_grid, train_len=args.train,
        trials=args.trials, test_len=args.test_len, seed=args.seed, lr=args.lr,
        max_updates=args.max_updates, stop_rule=args.stop_rule, eq_taps=args.eq_taps,
        passes=args.passes, cma_step=args.cma_step, mmse_step=args.mmse_step,
        timing=args.timing,
    )
    return spec, resolved


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _manifest(path: Path, args, resolved: dict, started: str, outputs: list[str]):
    argv = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    doc = {
        "tool": "blindeq",
        "version": __version__,
        "backend": BACKEND,
        "command": args.command,
        "args": argv,
        "resolved": resolved,
        "seed": getattr(args, "seed", None),
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def cmd_experiment(args) -> int:
    started = _now()
    spec, resolved = _plan(args)
    out = _out_dir(args)

    def progress(r):
        log.info("%s snr=%s trial=%d ser=%s", r.equalizer, r.snr_db, r.trial, r.ser)

    rows = evaluation.run_experiment(spec, jobs=args.jobs, progress=progress)
    results = out / "results.csv"
    summary = out / "results_summary.csv"
    _write(results, evaluation.results_csv(rows, record_timing=args.timing))
    _write(summary, evaluation.summary_csv(evaluation.summarize(rows)))
    _manifest(out / "manifest", args, resolved, started, [results.name, summary.name])
    failures = sum(r.failed for r in rows)
    print(f"wrote {len(rows)} rows ({failures} failed) to {out}")
    return 0


cmd_ser_vs_snr = cmd_ser_vs_train_size = cmd_hhat_robustness = cmd_convergence = cmd_experiment


def cmd_generate(args) -> int:
    started = _now()
    channel, _ = resolve_channel(args.channel)
    if args.train < 1 or args.test_len < 1:
        raise UsageError("--train and --test-len must be >= 1")
    ds = generate_dataset(channel, args.train, args.snr, args.seed, args.test_len)
    out = _out_dir(args)
    files = {
        "train_observed.txt": ds.train_observed,
        "train_symbols.txt": ds.truth_train_symbols,
        "test_observed.txt": ds.test_observed,
        "test_symbols.txt": ds.test_symbols,
    }
    for name, data in files.items():
        write_iq_file(out / name, data)
    resolved = {"realized_snr_db": ds.realized_snr_db, "padding_mode": channel.padding_mode.value}
    _manifest(out / "manifest", args, resolved, started, sorted(files))
    print(f"wrote dataset (realized SNR {ds.realized_snr_db:.6f} dB) to {out}")
    return 0


def cmd_equalize(args) -> int:
    started = _now()
    y = read_iq_file(args.input)
    subseq = min(args.subseq, y.size)
    try:
        cfg = vae.TrainConfig(
            subseq_len=subseq, hhat_len=args.hhat_len, init_seed=args.seed, learning_rate=args.lr,
            max_updates=args.max_updates, stop_rule=args.stop_rule,
        )
    except InvalidConfigError as exc:
        if y.size < max(args.hhat_len, vae.CONV1_LEN):
            raise InvalidInputError(f"{args.input}: {y.size} samples are too few to equalize") from None
        raise UsageError(str(exc)) from None
    params, hhat, report = vae.train(y, cfg)
    decided = vae.detect_symbols(vae.decoder_forward(params, y))
    out = _out_dir(args)
    write_iq_file(out / "detected.txt", decided)
    vae.dump_params(
        params, hhat, out / "params.txt",
        sigma2_hat=report.sigma2_hat, updates_used=report.updates_used, converged=int(report.converged),
    )
    _write(out / "loss_trace.txt", "".join(f"{float(v)!r}\n" for v in report.loss_trace))
    resolved = {"subseq_len": subseq, "hhat_len": args.hhat_len, "samples": int(y.size)}
    _manifest(out / "manifest", args, resolved, started, ["detected.txt", "params.txt", "loss_trace.txt"])
    print(
        f"{report.updates_used} updates (converged={report.converged}), "
        f"sigma2_hat={report.sigma2_hat:.6g}; outputs in {out}"
    )
    return 0


def cmd_rerun(args) -> int:
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            doc = json.load(fh)
        saved = doc["args"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    ns = argparse.Namespace(**saved)
    ns.verbose = False
    ns.out = args.out or str(Path(args.manifest).parent)
    if args.jobs is not None and hasattr(ns, "jobs"):
        ns.jobs = args.jobs
    return COMMANDS[ns.command](ns)


COMMANDS = {
    "generate": cmd_generate,
    "ser-vs-snr": cmd_ser_vs_snr,
    "ser-vs-train": cmd_ser_vs_train_size,
    "hhat-robustness": cmd_hhat_robustness,
    "convergence": cmd_convergence,
    "equalize": cmd_equalize,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"blindeq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except InvalidConfigError as exc:
        print(f"blindeq {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (BlindEqError, OSError) as exc:
        print(f"blindeq {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
