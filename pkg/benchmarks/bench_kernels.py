"""Compare the compiled and pure-Python kernels on the hot paths.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per call for each backend and the speedup.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from ncplace import harness, kernels
from ncplace import simulator as S
from ncplace.selection import promote


def _decode(core, G: int, P: int, rows: np.ndarray, payloads: np.ndarray) -> int:
    basis = np.zeros((G, G), np.uint8)
    pbasis = np.zeros((G, P), np.uint8)
    pivots = np.full(G, -1, np.int64)
    rank = 0
    for v, p in zip(rows, payloads):
        rank = core.insert_row(basis, pivots, rank, v.copy(), pbasis, p.copy())
    return rank


def cases():
    rng = np.random.default_rng(0)
    G, P = 32, 512
    rows = rng.integers(0, 256, (40, G), dtype=np.uint8)
    payloads = rng.integers(0, 256, (40, P), dtype=np.uint8)
    coeffs = rng.integers(0, 256, G, dtype=np.uint8)
    block = rng.integers(0, 256, (G, P), dtype=np.uint8)
    g = harness.estimator_corpus(6)[5]
    mixed = promote(g, g.sf_nodes[::2])
    return {
        "decode 32x512": lambda core, name: _decode(core, G, P, rows, payloads),
        "combine 32x512": lambda core, name: core.combine(coeffs, block),
        "expected_useful": lambda core, name: core.expected_useful(2.5, 0.1, 32, 1e-9, 1600),
        "simulate (SF)": lambda core, name: S.simulate(g, 32, seed=1, backend=name),
        "simulate (mixed)": lambda core, name: S.simulate(mixed, 32, seed=1, backend=name),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled core not available; build with `pip install -e . --no-build-isolation`")
    backends = {"python": kernels.backend("python"), "cython": kernels.backend("cython")}
    print(f"{'kernel':<18}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for name, fn in cases().items():
        best = {}
        for label, core in backends.items():
            timer = timeit.Timer(lambda: fn(core, label))
            n, _ = timer.autorange()
            best[label] = min(timer.repeat(args.repeat, n)) / n * 1e3
        print(f"{name:<18}{best['python']:>14.3f}{best['cython']:>14.3f}{best['python'] / best['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
