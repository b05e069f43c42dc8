"""Time the hot kernels with numba on and off.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each configuration runs in a fresh interpreter because the kernel path
is chosen at import time from QUANTJOINT_DISABLE_JIT.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from quantjoint._jit import USING_NUMBA
from quantjoint.distributions import rng_stream
from quantjoint.longitudinal import update_weights
from quantjoint.survival import explin_draw
from quantjoint.joint import run_chain
from quantjoint.model import McmcSettings, ModelSpec
from quantjoint.simulate import scenario, simulate

repeat = int(sys.argv[1])
rng = rng_stream(1)
res = {"numba": USING_NUMBA}

def clock(fn, n):
    fn()  # warm-up, includes compilation
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - t0) / n

terms = np.array([[0.1 * (k + 1), 0.0, -0.5, 0.0, k, k + 1.0] for k in range(10)])
res["explin_draw_us"] = 1e6 * clock(lambda: explin_draw(0.0, 1.0, 0.3, terms, rng, 1e-8), 200 * repeat)
resid = rng.standard_normal(2400)
res["weights_2400_ms"] = 1e3 * clock(lambda: update_weights(resid, 0.25, 0.0, 8.0, rng), 5 * repeat)
data, _ = simulate(scenario("default", n=100), rng_stream(2))
spec = ModelSpec(mcmc=McmcSettings(20 * repeat + 1, 0, 1))
run_chain(data, ModelSpec(mcmc=McmcSettings(2, 0, 1)))
t0 = time.perf_counter()
run_chain(data, spec)
res["chain_ms_per_iter"] = 1e3 * (time.perf_counter() - t0) / spec.mcmc.chain_length
print(json.dumps(res))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, QUANTJOINT_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    jit = run(False, args.repeat)
    py = run(True, args.repeat)
    print(f"{'kernel':<22}{'numba':>12}{'python':>12}{'speed-up':>10}")
    for key in ("explin_draw_us", "weights_2400_ms", "chain_ms_per_iter"):
        print(f"{key:<22}{jit[key]:>12.3f}{py[key]:>12.3f}{py[key] / jit[key]:>9.1f}x")


if __name__ == "__main__":
    main()
