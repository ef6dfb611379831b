"""Time the hot kernels under both backends.

The backend is fixed at import time, so each one runs in its own subprocess:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat: int) -> dict:
    import numpy as np

    from blindeq import BACKEND, baselines, vae
    from blindeq.signal import generate_dataset, preset_channel

    ds = generate_dataset(preset_channel("h1"), 2000, 10.0, seed=1, test_len=16)
    y = ds.train_observed
    params, hhat, _ = vae.initial_state(vae.TrainConfig())
    theta = vae.pack_params(params, hhat)
    from blindeq import kernels

    cfg = vae.TrainConfig(max_updates=2000, stop_rule="loss", rel_tol=0.0)
    adapt = baselines.AdaptConfig(passes=5)
    cases = {
        "loss_grad N=128": lambda: kernels.loss_grad(y[:128], theta, 2, True),
        "train 2000 updates N=128": lambda: vae.train(y, cfg),
        "cma 5 passes L=2000": lambda: baselines.cma_train(y, adapt),
        "nlms 5 passes L=2000": lambda: baselines.mmse_lms_train(
            y, ds.truth_train_symbols, baselines.AdaptConfig(step_size=baselines.MMSE_STEP, passes=5)
        ),
    }
    np.seterr(all="ignore")
    return {"backend": BACKEND, "times": {k: _best(f, repeat) for k, f in cases.items()}}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.repeat)))
        return
    results = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, BLINDEQ_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
            env=env, check=True, capture_output=True, text=True,
        ).stdout
        results[backend] = json.loads(out.strip().splitlines()[-1])["times"]
    width = max(len(k) for k in results["numba"])
    print(f"{'kernel':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for k in results["numba"]:
        a, b = results["numba"][k], results["numpy"][k]
        print(f"{k:<{width}}  {a:>10.5f}  {b:>10.5f}  {b / a:>7.1f}x")


if __name__ == "__main__":
    main()
