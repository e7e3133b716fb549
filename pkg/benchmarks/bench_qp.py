"""Compiled vs pure-Python QP kernels.

    python benchmarks/bench_qp.py [--batch 10 100 1000] [--rows 4] [--repeat 5]
    python benchmarks/bench_qp.py --rollout     # also time one training iteration per backend

Kernel timings call both modules directly on identical data and check that
they agree.  The rollout timing runs a subprocess per backend so that
STLBARRIER_PURE_PYTHON takes effect at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from stlbarrier.diffqp import _kernels_py

try:
    from stlbarrier.diffqp import _kernels
except ImportError:
    _kernels = None


def problems(rng, V, q, r):
    A = rng.normal(size=(V, q, q))
    Q = A @ A.transpose(0, 2, 1) + 0.5 * np.eye(q)
    F = rng.normal(scale=3.0, size=(V, q))
    G = rng.normal(size=(V, r, q))
    h = np.einsum("vij,vj->vi", G, rng.normal(size=(V, q))) + rng.uniform(0.0, 2.0, size=(V, r))
    return Q, F, G, h, np.ones((V, r), dtype=bool)


def best_of(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_kernels(batches, q, r, repeat):
    rng = np.random.default_rng(0)
    print(f"{'batch':>7} {'solve py':>10} {'solve c':>10} {'x':>6} {'bwd py':>10} {'bwd c':>10} {'x':>6}")
    for V in batches:
        Q, F, G, h, mask = problems(rng, V, q, r)
        up = rng.normal(size=(V, q))
        row = [f"{V:>7}"]
        sols = {}
        for name, mod in (("py", _kernels_py), ("c", _kernels)):
            if mod is None:
                continue
            ts, sols[name] = best_of(lambda m=mod: m.solve_batch(Q, F, G, h, mask, 200), repeat)
            u, lam, status, act = sols[name]
            tb, _ = best_of(lambda m=mod: m.backward_batch(Q, G, u, lam, act, status, up), repeat)
            sols[name + "_t"] = (ts, tb)
        py_s, py_b = sols["py_t"]
        if "c" in sols:
            c_s, c_b = sols["c_t"]
            assert np.allclose(sols["py"][0], sols["c"][0], atol=1e-10), "backends disagree"
            row += [f"{py_s * 1e3:>8.2f}ms", f"{c_s * 1e3:>8.2f}ms", f"{py_s / c_s:>5.0f}x",
                    f"{py_b * 1e3:>8.2f}ms", f"{c_b * 1e3:>8.2f}ms", f"{py_b / c_b:>5.0f}x"]
        else:
            row += [f"{py_s * 1e3:>8.2f}ms", "-", "-", f"{py_b * 1e3:>8.2f}ms", "-", "-"]
        print(" ".join(row))


ROLLOUT = """
import time, numpy as np
from stlbarrier import controller, diffqp
from stlbarrier.config import load_config
cfg = load_config("double_integrator_I1")
controller.train(cfg, iters=1, seed=0)
t = time.perf_counter()
controller.train(cfg, iters=2, seed=0)
print(diffqp.BACKEND, (time.perf_counter() - t) / 2)
"""


def bench_rollout():
    for flag in ("0", "1"):
        env = dict(os.environ, STLBARRIER_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", ROLLOUT], env=env, capture_output=True, text=True, check=True)
        backend, sec = out.stdout.split()
        print(f"training iteration ({backend}): {float(sec):.2f} s")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batch", type=int, nargs="+", default=[10, 100, 1000])
    ap.add_argument("--q", type=int, default=2)
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rollout", action="store_true")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernel not built; timing the pure-Python kernel only")
    bench_kernels(args.batch, args.q, args.rows, args.repeat)
    if args.rollout:
        bench_rollout()


if __name__ == "__main__":
    main()
