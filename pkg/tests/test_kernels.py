import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from molsampler import _kernels


@given(st.integers(1, 40), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_csr_aggregate_backends(n, d, seed):
    rng = np.random.default_rng(seed)
    rows = [np.unique(np.append(rng.integers(0, n, rng.integers(0, 4)), i)) for i in range(n)]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum([len(r) for r in rows], out=indptr[1:])
    indices = np.concatenate(rows).astype(np.int64)
    x = rng.normal(size=(n, d))
    ref = np.stack([x[r].sum(axis=0) for r in rows])
    assert np.allclose(_kernels.np_csr_aggregate(indptr, indices, x), ref, atol=1e-12)
    assert np.allclose(_kernels.nb_csr_aggregate(indptr, indices, x), ref, atol=1e-12)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30), st.floats(0.0, 0.999), st.integers(1, 50))
def test_systematic_resample_backends(w, u0, n):
    w = np.array(w) + 1e-3
    w /= w.sum()
    a = _kernels.np_systematic_resample(w, u0, n)
    b = _kernels.nb_systematic_resample(w, u0, n)
    assert np.array_equal(a, b)
    # each index is drawn floor or ceil of n * w_i times
    counts = np.bincount(a, minlength=len(w))
    assert np.all(np.abs(counts - n * w) <= 1.0 + 1e-9)


@given(st.lists(st.binary(max_size=40), max_size=20))
def test_fnv_backends_on_bytes(items):
    offsets = np.zeros(len(items) + 1, dtype=np.int64)
    np.cumsum([len(x) for x in items], out=offsets[1:])
    buf = np.frombuffer(b"".join(items), dtype=np.uint8) if items else np.zeros(0, np.uint8)
    assert np.array_equal(_kernels.np_fnv1a64(buf, offsets), _kernels.nb_fnv1a64(buf, offsets))


def test_chain_walk_follows_transition_law():
    # 2 states, op 0 only: from 0 move to 1 with path prob 0.6 then accept 0.5
    offsets = np.array([0, 1, 1, 1, 2, 2, 2], dtype=np.int64)
    targets = np.array([1, 0], dtype=np.int64)
    probs = np.array([0.6, 1.0])
    accept = np.array([0.5, 0.3])
    op_cum = np.array([1.0, 1.0, 1.0])
    u = np.random.default_rng(0).random((200_000, 3))
    for fn in (_kernels.np_chain_walk, _kernels.nb_chain_walk):
        visits, moved = fn(np.int64(0), op_cum, offsets, targets, probs, accept, u)
        # stationary: pi0 * 0.3 = pi1 * 0.3 -> (0.3/0.6, 0.3/0.6)
        assert abs((visits == 0).mean() - 0.3 / 0.6) < 0.01
        assert moved > 0


def test_disable_flag_selects_numpy():
    code = "from molsampler import _kernels; print(_kernels.BACKEND)"
    env = {**os.environ, "MOLSAMPLER_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["MOLSAMPLER_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numba"


def test_numpy_backend_end_to_end():
    """The oracle check passes with the pure-numpy kernels too."""
    env = {**os.environ, "MOLSAMPLER_DISABLE_NUMBA": "1"}
    r = subprocess.run([sys.executable, "-m", "molsampler", "verify"], env=env, capture_output=True,
                       text=True, timeout=600)
    assert r.returncode == 0, r.stderr
