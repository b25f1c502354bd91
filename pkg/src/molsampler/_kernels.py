"""Hot numeric loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics.  The numba
versions are used unless ``MOLSAMPLER_DISABLE_NUMBA`` is set to a truthy
value (or numba cannot be imported); ``BACKEND`` reports which one is live.
Both variants are importable under ``nb_*`` / ``np_*`` names so the
benchmark and the tests can compare them directly.
"""

import os

import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag("MOLSAMPLER_DISABLE_NUMBA")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy / python reference implementations


def np_chain_walk(start, op_cum, offsets, targets, probs, accept, uniforms):
    """Walk a tabulated three-operation Metropolis chain.

    ``offsets[3*s + k] : offsets[3*s + k + 1]`` indexes the proposal paths of
    operation ``k`` from state ``s``; path probabilities inside a block sum to
    at most one, the remainder being the probability that the proposal
    mechanism produced nothing.  ``uniforms`` has shape ``(n_steps, 3)``:
    operation choice, path choice, accept test.  Returns the visited states
    (after each step) and the number of moves that changed state.
    """
    n_steps = uniforms.shape[0]
    out = np.empty(n_steps, dtype=np.int64)
    state = int(start)
    moved = 0
    for t in range(n_steps):
        u_op, u_path, u_acc = uniforms[t]
        op = 0
        while op < 2 and u_op >= op_cum[op]:
            op += 1
        lo = offsets[3 * state + op]
        hi = offsets[3 * state + op + 1]
        acc = 0.0
        chosen = -1
        for p in range(lo, hi):
            acc += probs[p]
            if u_path < acc:
                chosen = p
                break
        if chosen >= 0 and u_acc < accept[chosen]:
            nxt = int(targets[chosen])
            if nxt != state:
                moved += 1
            state = nxt
        out[t] = state
    return out, moved


def np_csr_aggregate(indptr, indices, x):
    """Row ``i`` of the result is the sum of ``x[indices[indptr[i]:indptr[i+1]]]``.

    Rows must be non-empty (the GNN adjacency always carries self loops).
    """
    return np.add.reduceat(x[indices], indptr[:-1], axis=0)


def np_fnv1a64(buf, offsets):
    """64-bit FNV-1a of each byte string ``buf[offsets[i]:offsets[i+1]]``."""
    n = offsets.shape[0] - 1
    lengths = np.diff(offsets)
    h = np.full(n, FNV_OFFSET, dtype=np.uint64)
    if n == 0:
        return h
    for k in range(int(lengths.max(initial=0))):
        live = lengths > k
        idx = offsets[:-1][live] + k
        hv = h[live] ^ buf[idx].astype(np.uint64)
        h[live] = hv * FNV_PRIME
    return h


def np_systematic_resample(weights, u0, n):
    """Systematic (low-variance) resampling of ``n`` indices from normalized weights."""
    cum = np.cumsum(weights)
    positions = (u0 + np.arange(n)) / n
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, weights.shape[0] - 1).astype(np.int64)


def np_power_iteration(T, p0, tol, max_iter):
    p = p0.copy()
    for it in range(1, max_iter + 1):
        q = p @ T
        q /= q.sum()
        diff = np.abs(q - p).max()
        p = q
        if diff < tol:
            return p, it, True
    return p, max_iter, False


# ---------------------------------------------------------------------------
# numba versions


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def nb_chain_walk(start, op_cum, offsets, targets, probs, accept, uniforms):
        n_steps = uniforms.shape[0]
        out = np.empty(n_steps, dtype=np.int64)
        state = start
        moved = 0
        for t in range(n_steps):
            u_op = uniforms[t, 0]
            u_path = uniforms[t, 1]
            u_acc = uniforms[t, 2]
            op = 0
            while op < 2 and u_op >= op_cum[op]:
                op += 1
            lo = offsets[3 * state + op]
            hi = offsets[3 * state + op + 1]
            acc = 0.0
            chosen = -1
            for p in range(lo, hi):
                acc += probs[p]
                if u_path < acc:
                    chosen = p
                    break
            if chosen >= 0 and u_acc < accept[chosen]:
                nxt = targets[chosen]
                if nxt != state:
                    moved += 1
                state = nxt
            out[t] = state
        return out, moved

    @numba.njit(cache=True)
    def nb_csr_aggregate(indptr, indices, x):
        n = indptr.shape[0] - 1
        d = x.shape[1]
        out = np.zeros((n, d), dtype=x.dtype)
        for i in range(n):
            lo = indptr[i]
            hi = indptr[i + 1]
            for j in range(d):
                s = x[indices[lo], j]
                for k in range(lo + 1, hi):
                    s += x[indices[k], j]
                out[i, j] = s
        return out

    @numba.njit(cache=True)
    def nb_fnv1a64(buf, offsets):
        n = offsets.shape[0] - 1
        out = np.empty(n, dtype=np.uint64)
        prime = np.uint64(0x100000001B3)
        for i in range(n):
            h = np.uint64(0xCBF29CE484222325)
            for k in range(offsets[i], offsets[i + 1]):
                h = (h ^ np.uint64(buf[k])) * prime
            out[i] = h
        return out

    @numba.njit(cache=True)
    def nb_systematic_resample(weights, u0, n):
        cum = np.cumsum(weights)
        m = weights.shape[0]
        out = np.empty(n, dtype=np.int64)
        j = 0
        for k in range(n):
            pos = (u0 + k) / n
            while j < m and cum[j] <= pos:
                j += 1
            out[k] = min(j, m - 1)
        return out

    @numba.njit(cache=True)
    def nb_power_iteration(T, p0, tol, max_iter):
        n = p0.shape[0]
        p = p0.copy()
        q = np.empty(n)
        for it in range(1, max_iter + 1):
            for j in range(n):
                q[j] = 0.0
            for i in range(n):
                pi = p[i]
                if pi != 0.0:
                    for j in range(n):
                        q[j] += pi * T[i, j]
            total = q.sum()
            diff = 0.0
            for j in range(n):
                v = q[j] / total
                dv = abs(v - p[j])
                if dv > diff:
                    diff = dv
                p[j] = v
            if diff < tol:
                return p, it, True
        return p, max_iter, False

else:  # pragma: no cover
    nb_chain_walk = np_chain_walk
    nb_csr_aggregate = np_csr_aggregate
    nb_fnv1a64 = np_fnv1a64
    nb_systematic_resample = np_systematic_resample
    nb_power_iteration = np_power_iteration


if USE_NUMBA:
    chain_walk = nb_chain_walk
    csr_aggregate = nb_csr_aggregate
    fnv1a64 = nb_fnv1a64
    systematic_resample = nb_systematic_resample
    power_iteration = nb_power_iteration
else:
    chain_walk = np_chain_walk
    csr_aggregate = np_csr_aggregate
    fnv1a64 = np_fnv1a64
    systematic_resample = np_systematic_resample
    power_iteration = np_power_iteration
