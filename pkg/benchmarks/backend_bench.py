"""Compare the compiled (numba) kernels against the pure-Python fallback.

The backend is fixed per process by STEERLAB_DISABLE_NUMBA, so this script
re-runs itself in a subprocess per backend and prints a side-by-side table.

    python benchmarks/backend_bench.py            # both backends
    python benchmarks/backend_bench.py --inner    # one backend (internal)
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def workload(reps_scale=1.0):
    from steerlab import kernels
    from steerlab.accel import NUMBA_ENABLED
    from steerlab.vehicle import VehicleParams

    params = VehicleParams()
    v, lf, dt, dmax = params.v, params.l_f, params.dt, params.delta_max
    s = params.spacing
    rng = np.random.default_rng(0)

    n = 20
    instances = []
    for _ in range(16):
        kappa = rng.uniform(-1.0, 1.0)
        th = x = y = 0.0
        pts = np.empty((n, 2))
        for i in range(n):
            x += s * np.cos(th)
            y += s * np.sin(th)
            th += s * kappa
            pts[i] = (x, y)
        instances.append(
            (rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 0.4), pts)
        )
    u = rng.uniform(-dmax, dmax, n)
    grad = np.empty(n)
    feats = rng.normal(size=40)
    dims = np.array([40, 10, 10, 10, 1], dtype=np.int64)
    acts = np.array([2, 2, 2, 3], dtype=np.int64)
    nparams = int(np.sum(dims[1:] * dims[:-1] + dims[1:]))
    mparams = rng.normal(scale=0.3, size=nparams)

    def bench(name, fn, reps):
        fn()  # warm up (includes JIT compilation on the compiled backend)
        tic = time.perf_counter()
        for _ in range(reps):
            fn()
        return name, (time.perf_counter() - tic) / reps

    results = {}
    x0, y0, th0, pts = instances[0]

    name, t = bench(
        "rollout_cost_grad",
        lambda: kernels.rollout_cost_grad(x0, y0, th0, u, pts, v, lf, dt, grad),
        max(1, int(20000 * reps_scale)),
    )
    results[name] = t

    it = iter(range(10 ** 9))

    def solve_one():
        inst = instances[next(it) % len(instances)]
        kernels.solve_tracking(
            inst[0], inst[1], inst[2], np.zeros(n), inst[3],
            v, lf, dt, dmax, 500, 1e-8,
        )

    name, t = bench("solve_tracking", solve_one, max(1, int(200 * reps_scale)))
    results[name] = t

    name, t = bench(
        "mlp_forward_3x10",
        lambda: kernels.mlp_forward(mparams, dims, acts, dmax, feats),
        max(1, int(20000 * reps_scale)),
    )
    results[name] = t

    return {"numba": NUMBA_ENABLED, "times": results}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    parser.add_argument("--quick", action="store_true", help="fewer repetitions")
    args = parser.parse_args()
    scale_fast = 0.25 if args.quick else 1.0
    scale_pure = 0.02 if args.quick else 0.05  # the fallback is much slower

    if args.inner:
        scale = scale_fast if os.environ.get("STEERLAB_DISABLE_NUMBA") != "1" else scale_pure
        print(json.dumps(workload(scale)))
        return

    out = {}
    for label, disable in (("numba", "0"), ("pure", "1")):
        env = dict(os.environ, STEERLAB_DISABLE_NUMBA=disable)
        res = subprocess.run(
            [sys.executable, __file__, "--inner"] + (["--quick"] if args.quick else []),
            capture_output=True, text=True, env=env,
        )
        if res.returncode != 0:
            print(res.stderr, file=sys.stderr)
            raise SystemExit(1)
        out[label] = json.loads(res.stdout.strip().splitlines()[-1])

    assert out["numba"]["numba"] is True, "numba backend did not activate"
    assert out["pure"]["numba"] is False, "fallback did not activate"
    print(f"{'kernel':24s} {'numba':>12s} {'pure python':>14s} {'speedup':>9s}")
    for name in out["numba"]["times"]:
        tn = out["numba"]["times"][name]
        tp = out["pure"]["times"][name]
        print(f"{name:24s} {tn * 1e6:10.2f} us {tp * 1e6:12.2f} us {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
