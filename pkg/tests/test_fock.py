import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beclab import _fock_py
from beclab.fock import BACKEND, FockSector, SectorSizeError, reduce_pair, sector_dimension

try:
    from beclab import _fock_ext
except ImportError:  # pure-Python install
    _fock_ext = None

sizes = st.tuples(st.integers(1, 6), st.integers(0, 7))


@given(sizes)
def test_dimension_and_bijection(nd):
    d, N = nd
    sec = FockSector(d, N)
    assert sec.dim == math.comb(N + d - 1, N) == sector_dimension(N, d)
    assert np.all(sec.states.sum(axis=1) == N)
    assert len({tuple(s) for s in sec.states}) == sec.dim
    assert np.array_equal(sec.rank(sec.states), np.arange(sec.dim))


def test_reverse_lexicographic_order():
    sec = FockSector(3, 2)
    assert [tuple(s) for s in sec.states] == [(2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2)]
    assert sec.index[(2, 0, 0)] == 0


def test_cap_and_bad_occupations():
    with pytest.raises(SectorSizeError):
        FockSector(20, 20)
    sec = FockSector(3, 2)
    with pytest.raises(ValueError):
        sec.rank([1, 0, 0])
    with pytest.raises(ValueError):
        sec.annihilator(3)


@pytest.mark.skipif(_fock_ext is None, reason="compiled kernels not built")
@given(sizes)
def test_compiled_kernels_match_numpy(nd):
    d, N = nd
    a = FockSector(d, N, kernels=_fock_py)
    b = FockSector(d, N, kernels=_fock_ext)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.rank(a.states), b.rank(b.states))
    for order in (1, 2):
        if order <= N:
            assert (a.annihilator(order) != b.annihilator(order)).nnz == 0


def test_annihilator_amplitudes():
    sec = FockSector(2, 3)
    A = sec.annihilator(1).toarray()
    psi = sec.basis_state([2, 1])
    out = (A @ psi).reshape(2, -1)
    low = FockSector(2, 2)
    assert np.allclose(out[0], math.sqrt(2) * low.basis_state([1, 1]))
    assert np.allclose(out[1], low.basis_state([2, 0]))
    # a_l a_k for k = l picks up sqrt(n (n - 1))
    pair = reduce_pair(sec, sec.basis_state([3, 0]), 2)
    assert np.allclose(pair[0], math.sqrt(6) * FockSector(2, 1).basis_state([1, 0]))


@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_number_operator_sum_rule(d, N, seed):
    sec = FockSector(d, N)
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=sec.dim) + 1j * rng.normal(size=sec.dim)
    psi /= np.linalg.norm(psi)
    A = sec.annihilator(1)
    # sum_k |a_k psi|^2 = N
    assert np.linalg.norm(A @ psi) ** 2 == pytest.approx(N, rel=1e-12)
    total = sum(np.vdot(psi, sec.number_operator(k) @ psi).real for k in range(d))
    assert total == pytest.approx(N, rel=1e-12)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_coherent_state_is_normalized(d, N, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=d) + 1j * rng.normal(size=d)
    psi = FockSector(d, N).coherent_state(c)
    assert np.linalg.norm(psi) == pytest.approx(1.0, rel=1e-12)


def test_pure_backend_env_var():
    env = dict(os.environ, BEC_LAB_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import beclab.fock as f; print(f.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert BACKEND in ("compiled", "python")
