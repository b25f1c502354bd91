"""Compare the numba kernels with their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Each kernel is run on inputs sized like a real workload; the outputs of the
two backends are checked for agreement before timings are reported.  With
``--end-to-end`` the ``verify`` command is also timed in two subprocesses,
one with ``MOLSAMPLER_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from molsampler import _kernels as K


def _time(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b) if np.issubdtype(np.asarray(a).dtype, np.floating) else np.array_equal(a, b)


def cases(rng):
    # tabulated chain over a ring of 50 states, two paths per operation
    n_states, steps = 50, 200_000
    offsets = np.arange(0, 6 * n_states + 1, 2, dtype=np.int64)
    targets = np.empty(6 * n_states, dtype=np.int64)
    for s in range(n_states):
        targets[6 * s:6 * s + 6] = [(s + d) % n_states for d in (0, 1, 1, -1, 2, -2)]
    probs = np.full(6 * n_states, 0.45)
    accept = rng.random(6 * n_states)
    op_cum = np.array([0.5, 0.75, 1.0])
    yield "chain_walk", (np.int64(0), op_cum, offsets, targets, probs, accept, rng.random((steps, 3)))

    # neighbour sum over a batch of 256 graphs of ~20 nodes, width 300
    n = 5000
    deg = rng.integers(1, 5, n)
    indptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
    indices = rng.integers(0, n, indptr[-1]).astype(np.int64)
    yield "csr_aggregate", (indptr, indices, rng.standard_normal((n, 300)))

    lens = rng.integers(4, 40, 20_000)
    offs = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    yield "fnv1a64", (rng.integers(0, 256, offs[-1]).astype(np.uint8), offs)

    w = rng.random(2000)
    yield "systematic_resample", (w / w.sum(), 0.37, 2000)

    T = rng.random((300, 300))
    T /= T.sum(axis=1, keepdims=True)
    yield "power_iteration", (T, np.full(300, 1 / 300), 1e-13, 100_000)


def end_to_end():
    rows = []
    for label, extra in (("numba", {}), ("numpy", {"MOLSAMPLER_DISABLE_NUMBA": "1"})):
        env = {**os.environ, **extra}
        t0 = time.perf_counter()
        subprocess.run([sys.executable, "-m", "molsampler", "verify"], env=env, check=True,
                       stdout=subprocess.DEVNULL)
        rows.append((label, time.perf_counter() - t0))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    print(f"{'kernel':<22}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, a in cases(np.random.default_rng(args.seed)):
        nb, py = getattr(K, f"nb_{name}"), getattr(K, f"np_{name}")
        if not _same(nb(*a), py(*a)):
            sys.exit(f"{name}: backends disagree")
        t_nb, t_np = _time(nb, a, args.repeat), _time(py, a, args.repeat)
        print(f"{name:<22}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>9.1f}x")

    if args.end_to_end:
        print("\nverify command, wall clock:")
        for label, secs in end_to_end():
            print(f"  {label:<8}{secs:8.1f} s")


if __name__ == "__main__":
    main()
