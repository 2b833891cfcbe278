import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from beclab.fock import FockSector
from beclab.manybody import (SectorSupportError, assemble, condensate_fraction,
                             contact_tensor, dump_coordinates, extract_sector_state, ground_state,
                             hamiltonian_from_tensors, one_body_matrix, product_state,
                             projected_interaction_bound, read_coordinates, reduced_density, sector_counts,
                             sector_decompose, symmetrize_tensor, two_body_block, two_body_tensor,
                             verify_sector_trace)
from beclab.potentials import make_interaction, scale
from beclab.spectral import BandScheme, Grid2D, Projector, build_basis
from beclab.variational import galerkin_minimize

from oracles import dense_partial_trace, symmetric_tensor


def random_state(sector, rng):
    v = rng.normal(size=sector.dim) + 1j * rng.normal(size=sector.dim)
    return v / np.linalg.norm(v)


def random_tensors(d, rng):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    t = 0.5 * (X + X.conj().T)
    Y = rng.normal(size=(d * d, d * d)) + 1j * rng.normal(size=(d * d, d * d))
    W = (0.5 * (Y + Y.conj().T)).reshape(d, d, d, d)
    # exchange symmetry V_ijkl = V_jilk, as for any two-body potential
    W = 0.5 * (W + W.transpose(1, 0, 3, 2))
    return t, W


def dense_hamiltonian(t, V, N):
    """First-quantized H on (C^d)^{(x)N}: sum_p t_p + 1/(N-1) sum_{p<q} V_pq."""
    d = t.shape[0]
    eye = np.eye(d)
    H = np.zeros((d**N, d**N), dtype=complex)
    for p in range(N):
        ops = [eye] * N
        ops[p] = t
        term = ops[0]
        for o in ops[1:]:
            term = np.kron(term, o)
        H += term
    Vm = V.reshape(d * d, d * d)
    for p, q in itertools.combinations(range(N), 2):
        # move particles p, q to the front, apply V, move back
        perm = [p, q] + [r for r in range(N) if r not in (p, q)]
        P = np.zeros((d**N, d**N))
        for idx in itertools.product(range(d), repeat=N):
            src = np.ravel_multi_index(idx, (d,) * N)
            dst = np.ravel_multi_index(tuple(idx[r] for r in perm), (d,) * N)
            P[dst, src] = 1
        H += P.T @ np.kron(Vm, np.eye(d ** (N - 2))) @ P / (N - 1)
    return H


@pytest.mark.parametrize("d,N", [(2, 2), (2, 3), (3, 3)])
def test_hamiltonian_matches_first_quantized_oracle(d, N):
    rng = np.random.default_rng(d * 10 + N)
    t, V = random_tensors(d, rng)
    H = hamiltonian_from_tensors(t, V, N)
    Hd = dense_hamiltonian(t, V, N)
    assert H.hermiticity_error() < 1e-12
    for _ in range(3):
        psi = random_state(H.sector, rng)
        T = symmetric_tensor(H.sector.states, psi, d).ravel()
        assert np.linalg.norm(T) == pytest.approx(1.0)
        assert H.energy(psi) == pytest.approx(np.vdot(T, Hd @ T).real, rel=1e-11, abs=1e-11)


def test_single_mode_energy():
    a, N = -1.7, 5
    H = hamiltonian_from_tensors(np.array([[0.3]]), np.full((1, 1, 1, 1), a), N)
    e, _ = ground_state(H)
    # N t + 1/(N-1) * 1/2 * a N (N-1)  per particle
    assert e == pytest.approx(0.3 + a / 2, rel=1e-14)


def test_noninteracting_spectrum_is_diagonal():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=15.0).truncate(5)
    H = assemble(basis, None, 3)
    diag = H.sparse_matrix.diagonal().real
    assert (H.sparse_matrix - sp.diags(diag)).count_nonzero() == 0
    assert np.allclose(diag, H.sector.states @ basis.eigenvalues)


def test_dense_and_sparse_ground_states_agree():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=20.0).truncate(5)
    w = make_interaction("gaussian", {"height": -10.0, "width": 0.2}, g)
    H = assemble(basis, scale(w, 0.25, 6, check_resolution=False), 6)
    assert H.dim > 100
    e_dense, psi = ground_state(H)
    w_all = np.linalg.eigvalsh(H.sparse_matrix.toarray())
    assert e_dense == pytest.approx(w_all[0] / 6, rel=1e-12)
    from beclab import manybody
    old = manybody.DENSE_EIG_LIMIT
    try:
        manybody.DENSE_EIG_LIMIT = 10
        e_sparse, _ = ground_state(H)
    finally:
        manybody.DENSE_EIG_LIMIT = old
    assert e_sparse == pytest.approx(e_dense, rel=1e-10)


def test_plane_wave_fast_path_matches_fft_path():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=15.0)
    w = make_interaction("gaussian", {"height": 2.0, "width": 0.3}, g)
    wN = scale(w, 0.5, 2, check_resolution=False)
    fast = two_body_tensor(basis, wN)
    slow = two_body_block(basis, wN.fourier)
    assert np.max(np.abs(fast - slow)) < 1e-12


def test_contact_tensor_of_constant_mode():
    g = Grid2D(2.0, 16)
    basis = build_basis(g, None, cutoff=1.0)
    V = contact_tensor(basis, 3.0)
    assert V.shape == (1, 1, 1, 1)
    assert V[0, 0, 0, 0].real == pytest.approx(3.0 / 4.0)


def test_coordinate_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    t, V = random_tensors(3, rng)
    H = hamiltonian_from_tensors(t, V, 4)
    path = tmp_path / "H.coo"
    dump_coordinates(H, path)
    first = path.read_text().splitlines()[0].split()
    assert len(first) == 4
    back = read_coordinates(path, H.dim)
    assert abs(back - H.sparse_matrix).max() == 0


# ---------------------------------------------------------------------------
# reduced density matrices


def test_rdm_examples():
    sec = FockSector(2, 2)
    g1 = reduced_density(sec, sec.basis_state([1, 1]), 1).matrix
    assert np.allclose(g1, np.eye(2) / 2)
    g1 = reduced_density(sec, sec.basis_state([2, 0]), 1).matrix
    assert np.allclose(g1, np.diag([1, 0]))
    g2 = reduced_density(sec, sec.basis_state([1, 1]), 2).matrix
    # (|01> + |10>)/sqrt2 on the pair space
    v = np.zeros(4)
    v[1] = v[2] = 1 / math.sqrt(2)
    assert np.allclose(g2, np.outer(v, v))


@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_rdm_matches_dense_partial_trace(d, N, seed):
    rng = np.random.default_rng(seed)
    sec = FockSector(d, N)
    psi = random_state(sec, rng)
    T = symmetric_tensor(sec.states, psi, d)
    for k in (1, 2):
        G = reduced_density(sec, psi, k)
        assert np.max(np.abs(G.matrix - dense_partial_trace(T, k))) < 1e-12
        assert G.trace == pytest.approx(1.0, abs=1e-12)
        assert G.eigenvalues()[0] > -1e-12
    g1, g2 = reduced_density(sec, psi, 1).matrix, reduced_density(sec, psi, 2).matrix
    # partial trace of gamma2 is gamma1
    assert np.allclose(np.einsum("ijkj->ik", g2.reshape(d, d, d, d)), g1, atol=1e-12)


def test_rdm_of_mixed_state_is_average(rng):
    sec = FockSector(3, 3)
    a, b = random_state(sec, rng), random_state(sec, rng)
    rho = 0.3 * np.outer(a, a.conj()) + 0.7 * np.outer(b, b.conj())
    G = reduced_density(sec, rho, 1).matrix
    expected = 0.3 * reduced_density(sec, a, 1).matrix + 0.7 * reduced_density(sec, b, 1).matrix
    assert np.allclose(G, expected, atol=1e-12)


def test_product_state_is_fully_condensed(rng):
    sec = FockSector(4, 5)
    c = rng.normal(size=4) + 1j * rng.normal(size=4)
    g1 = reduced_density(sec, product_state(sec, c), 1)
    u = c / np.linalg.norm(c)
    assert np.allclose(g1.matrix, np.outer(u, u.conj()), atol=1e-12)
    assert condensate_fraction(g1) == pytest.approx(1.0)


def test_rdm_rejects_bad_order():
    sec = FockSector(2, 1)
    with pytest.raises(ValueError):
        reduced_density(sec, sec.basis_state([1, 0]), 2)


# ---------------------------------------------------------------------------
# sector identities


@pytest.mark.parametrize("d,occ,P1,P2,expected", [
    (2, [1, 1], [0], [1], 1 / 2),
    (2, [2, 1], [0], [1], 1 / 3),
    (3, [3, 2, 1], [0], [1], 6 / 30),
])
def test_sector_trace_examples(d, occ, P1, P2, expected):
    sec = FockSector(d, sum(occ))
    val = verify_sector_trace(sec, sec.basis_state(occ), Projector.from_modes(P1, d), Projector.from_modes(P2, d))
    assert abs(val - expected) < 1e-14


@given(st.integers(0, 2**31 - 1))
def test_sector_trace_on_random_sharp_states(seed):
    rng = np.random.default_rng(seed)
    d, N = 4, 5
    sec = FockSector(d, N)
    P1, P2 = Projector.from_modes([0, 1], d), Projector.from_modes([2], d)
    j1, j2 = 2, 2
    on = (sec.states[:, :2].sum(axis=1) == j1) & (sec.states[:, 2] == j2)
    psi = np.where(on, rng.normal(size=sec.dim) + 1j * rng.normal(size=sec.dim), 0)
    psi /= np.linalg.norm(psi)
    assert sector_counts(sec, psi, P1, P2) == (j1, j2)
    assert abs(verify_sector_trace(sec, psi, P1, P2) - j1 * j2 / (N * (N - 1))) < 1e-12


def test_sector_trace_needs_sharp_numbers():
    sec = FockSector(2, 2)
    psi = (sec.basis_state([2, 0]) + sec.basis_state([1, 1])) / math.sqrt(2)
    with pytest.raises(SectorSupportError):
        verify_sector_trace(sec, psi, Projector.from_modes([0], 2), Projector.from_modes([1], 2))


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_extracted_state_identity(seed, mixed):
    rng = np.random.default_rng(seed)
    d, N, j = 5, 5, 3
    sec = FockSector(d, N)
    P = Projector.from_modes([0, 2, 3], d)
    on = sec.states[:, P.mask].sum(axis=1) == j

    def sharp():
        v = np.where(on, rng.normal(size=sec.dim) + 1j * rng.normal(size=sec.dim), 0)
        return v / np.linalg.norm(v)

    state = sharp()
    if mixed:
        b = sharp()
        state = 0.6 * np.outer(state, state.conj()) + 0.4 * np.outer(b, b.conj())
    out = extract_sector_state(sec, state, P)
    assert out.identity_error < 1e-12
    assert out.trace == pytest.approx(1.0, abs=1e-12)
    assert out.sector.particle_count == j


def test_extracted_state_of_basis_state():
    # tracing out the third mode of |2,1,1> leaves the pure |2,1>
    sec = FockSector(3, 4)
    psi = sec.basis_state([2, 1, 1])
    out = extract_sector_state(sec, psi, Projector.from_modes([0, 1], 3))
    sub = out.sector
    assert sub.particle_count == 3
    expected = np.outer(sub.basis_state([2, 1]), sub.basis_state([2, 1]))
    assert np.allclose(out.density, expected)


def test_extracted_state_needs_two_particles():
    sec = FockSector(2, 2)
    with pytest.raises(SectorSupportError):
        extract_sector_state(sec, sec.basis_state([1, 1]), Projector.from_modes([0], 2))


@given(st.integers(0, 2**31 - 1))
def test_sector_decomposition_is_orthogonal(seed):
    rng = np.random.default_rng(seed)
    sec = FockSector(5, 4)
    psi = random_state(sec, rng)
    dec = sector_decompose(sec, psi, bands=[1, 1, 2, 2, 3])
    assert dec.pythagoras_error(psi) < 1e-12
    assert np.allclose(sum(dec.components.values()), psi)
    for J in dec.components:
        assert sum(J) == 4 and len(J) == 3


def test_sector_decomposition_heavy_set():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=20.0).truncate(5)
    scheme = BandScheme(epsilon=0.25, band_count=2, surrogate_N=10**4)
    sec = FockSector(5, 3)
    psi = sec.basis_state([3, 0, 0, 0, 0])
    dec = sector_decompose(sec, psi, scheme, basis=basis, threshold=2)
    (J,) = dec.components
    assert J == (3, 0, 0)
    assert dec.heavy_set[J] == frozenset({1})


# ---------------------------------------------------------------------------
# variational chain and projected bound


def test_manybody_energy_below_galerkin_hartree():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=20.0).truncate(5)
    w = make_interaction("gaussian", {"height": -40.0, "width": 0.15}, g)
    for N in (2, 4, 6):
        wN = scale(w, 0.25, N, check_resolution=False)
        H = assemble(basis, wN, N)
        eN, _ = ground_state(H)
        eH, c = galerkin_minimize(one_body_matrix(basis), symmetrize_tensor(two_body_tensor(basis, wN)))
        assert eN <= eH + 1e-9
        # the product state of the Hartree minimizer attains e^H exactly
        assert H.energy(product_state(H.sector, c)) / N == pytest.approx(eH, rel=1e-9)


def test_projected_bound_trivial_cases():
    g = Grid2D(1.0, 32)
    basis = build_basis(g, None, cutoff=16.0)
    w = make_interaction("gaussian", {"height": 1.0, "width": 0.5}, g)  # positive Fourier transform
    bound = projected_interaction_bound(basis, 15.0, 10.0, scale(w, 0.5, 64, check_resolution=False))
    assert bound.min_eigenvalue > -1e-12
    assert bound.fitted_C == 0.0
    neg = make_interaction("gaussian", {"height": -1.0, "width": 0.5}, g)
    b2 = projected_interaction_bound(basis, 15.0, 10.0, scale(neg, 0.5, 64, check_resolution=False))
    assert b2.min_eigenvalue < 0 and b2.fitted_C > 0
    with pytest.raises(ValueError):
        projected_interaction_bound(basis, 5.0, 10.0, scale(w, 0.5, 64, check_resolution=False))
