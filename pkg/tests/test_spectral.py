import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beclab.spectral import (BandScheme, Grid2D, Projector, SpectralField, TrapPotential, band_dimension_profile,
                             band_projector, build_basis, counting_function, cutoff_projector, eigen_residuals,
                             fit_growth_exponent, kinetic_energy, quartic_norm)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid2D(1.0, 12)
    with pytest.raises(ValueError):
        Grid2D(1.0, 4)
    with pytest.raises(ValueError):
        Grid2D(-1.0, 16)


@given(st.integers(0, 2**31 - 1), st.sampled_from([8, 16, 32]), st.floats(0.5, 20.0))
def test_parseval(seed, n, L):
    g = Grid2D(L, n)
    r = np.random.default_rng(seed)
    u = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    c = g.to_momentum(u)
    assert np.sum(np.abs(c) ** 2) == pytest.approx(g.norm(u) ** 2, rel=1e-12)
    assert np.allclose(g.from_momentum(c), u, atol=1e-12)


def test_plane_wave_kinetic_energy():
    g = Grid2D(2.0, 32)
    X, Y = g.coords
    k = 2 * np.pi / g.side_length * np.array([2, -3])
    u = SpectralField(g, np.exp(1j * (k[0] * X + k[1] * Y)) / g.side_length)
    assert kinetic_energy(u) == pytest.approx(k @ k, rel=1e-12)
    assert quartic_norm(u) == pytest.approx(1 / g.side_length**2, rel=1e-12)


def test_nan_rejected():
    g = Grid2D(1.0, 8)
    v = np.ones((8, 8), dtype=complex)
    v[0, 0] = np.nan
    with pytest.raises(ValueError):
        kinetic_energy(SpectralField(g, v))


def test_plane_wave_basis_is_orthonormal_and_sorted():
    g = Grid2D(1.0, 32)
    b = build_basis(g, None, cutoff=20.0)
    assert np.allclose(b.gram(), np.eye(b.dim), atol=1e-12)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert b.eigenvalues[0] == 0.0
    assert np.max(eigen_residuals(b)) < 1e-9


def test_cutoff_above_nyquist_rejected():
    g = Grid2D(1.0, 8)
    with pytest.raises(ValueError):
        build_basis(g, None, cutoff=2 * g.nyquist)


def test_harmonic_basis_matches_oscillator_levels():
    g = Grid2D(12.0, 64)
    b = build_basis(g, TrapPotential.harmonic(), cutoff=math.sqrt(9.0))
    # 2D oscillator -Lap + |x|^2: levels 2(n+1) with multiplicity n+1
    expected = np.array([2, 4, 4, 6, 6, 6, 8, 8, 8, 8], dtype=float)
    assert b.dim == len(expected)
    assert np.allclose(b.eigenvalues, expected, atol=1e-6)
    assert np.allclose(b.gram(), np.eye(b.dim), atol=1e-10)
    assert np.max(eigen_residuals(b)) < 1e-6


def test_band_projectors_resolve_identity():
    g = Grid2D(1.0, 32)
    b = build_basis(g, None, cutoff=40.0)
    scheme = BandScheme(epsilon=0.25, band_count=3, surrogate_N=10**8)
    Ps = [band_projector(b, scheme, i) for i in range(1, 5)]
    total = sum(P.matrix for P in Ps)
    assert np.allclose(total, np.eye(b.dim))
    for i, P in enumerate(Ps):
        assert np.allclose(P.matrix @ P.matrix, P.matrix)
        for Q in Ps[i + 1:]:
            assert np.allclose(P.matrix @ Q.matrix, 0)


@given(st.lists(st.integers(0, 9), unique=True, max_size=10))
def test_projector_complement(modes):
    P = Projector.from_modes(modes, 10)
    Q = P.complement()
    assert np.allclose(P.matrix + Q.matrix, np.eye(10))
    assert np.allclose(P.matrix @ Q.matrix, 0)
    assert P.rank + Q.rank == 10


def test_band_edges_left_closed():
    scheme = BandScheme(epsilon=0.5, band_count=2, surrogate_N=4)  # edges 2, 4
    assert list(scheme.band_of([0.0, 3.99, 4.0, 15.99, 16.0])) == [1, 1, 2, 2, 3]


def test_scheme_interaction_constraint():
    scheme = BandScheme(epsilon=1 / 38, band_count=14)
    scheme.check_interaction(0.25)
    with pytest.raises(ValueError):
        BandScheme(epsilon=1 / 38, band_count=13).check_interaction(0.25)


def test_counting_function_growth_on_torus():
    # Weyl law in 2D: #{sqrt(lambda) < K} grows like K^2
    g = Grid2D(1.0, 64)
    b = build_basis(g, None, cutoff=150.0)
    slope = fit_growth_exponent(b, [40.0, 70.0, 100.0, 140.0])
    assert slope == pytest.approx(2.0, abs=0.1)
    assert counting_function(b, 0.0) == 0
    assert counting_function(b, 1e-9) == 1
    assert cutoff_projector(b, 1.0).rank == 1


def test_band_profile_flags():
    g = Grid2D(1.0, 64)
    b = build_basis(g, None, cutoff=150.0)
    rows = band_dimension_profile(b, BandScheme(epsilon=0.25, band_count=3, surrogate_N=10**6))
    assert len(rows) == 3
    assert [r.cumulative_dim for r in rows] == [counting_function(b, K) for K in (10**1.5, 10**3, 10**4.5)]
    assert all(r.cumulative_dim >= 0 and not r.exceeds for r in rows)
    assert band_dimension_profile(b, BandScheme(band_count=0)) == []
