import math

import numpy as np
import pytest

from beclab.potentials import (ResolutionError, convolve_density, make_interaction, read_tabulated, scale,
                               tabulated_interaction, write_tabulated)
from beclab.spectral import Grid2D


@pytest.mark.parametrize("profile,params,n", [
    ("gaussian", {"height": -2.0, "width": 0.7}, 128),
    ("compact-bump", {"height": 1.5, "radius": 1.2}, 512),  # steep edges need a finer grid
    ("signed-mixture", {"height1": 3.0, "width1": 0.5, "height2": 1.0, "width2": 1.0}, 128),
])
def test_fourier_table_matches_fft_of_samples(profile, params, n):
    g = Grid2D(16.0, n)
    w = make_interaction(profile, params, g)
    fft = g.cell_area * np.fft.fft2(np.fft.ifftshift(w.samples()))
    assert np.max(np.abs(fft.real - w.fourier)) < 1e-6 * np.max(np.abs(w.fourier))
    assert np.max(np.abs(fft.imag)) < 1e-9
    assert w.mass_a == pytest.approx(g.cell_area * w.samples().sum(), rel=1e-6)


def test_gaussian_norms():
    g = Grid2D(10.0, 64)
    w = make_interaction("gaussian", {"height": -2.0, "width": 0.5}, g)
    assert w.mass_a == pytest.approx(-2.0 * math.pi * 0.25, rel=1e-12)
    assert w.negative_mass == pytest.approx(2.0 * math.pi * 0.25, rel=1e-9)
    assert w.l1_norm == pytest.approx(w.negative_mass, rel=1e-12)
    assert w.l2_norm == pytest.approx(math.sqrt(4.0 * math.pi * 0.25 / 2), rel=1e-9)


def test_bad_parameters_rejected():
    g = Grid2D(1.0, 16)
    with pytest.raises(ValueError):
        make_interaction("gaussian", {"height": 1.0}, g)
    with pytest.raises(ValueError):
        make_interaction("gaussian", {"height": 1.0, "width": 1.0, "center": (0.1, 0.0)}, g)
    with pytest.raises(ValueError):
        make_interaction("lorentzian", {}, g)


def test_scaling_preserves_mass_and_shrinks_width():
    g = Grid2D(8.0, 256)
    w = make_interaction("gaussian", {"height": 1.0, "width": 1.0}, g)
    wN = scale(w, 0.5, 16)
    assert wN.width == pytest.approx(0.25)
    assert wN.fourier[0, 0] == pytest.approx(w.mass_a)
    assert g.cell_area * wN.samples().sum() == pytest.approx(w.mass_a, rel=1e-8)


def test_unresolved_scaling_names_required_points():
    g = Grid2D(8.0, 32)
    w = make_interaction("gaussian", {"height": 1.0, "width": 1.0}, g)
    with pytest.raises(ResolutionError) as exc:
        scale(w, 1.0, 100)
    assert exc.value.required_n >= 8 * 8.0 * 100
    assert exc.value.required_n & (exc.value.required_n - 1) == 0
    # Fourier-space work does not need the samples
    wN = scale(w, 1.0, 100, check_resolution=False)
    assert wN.fourier[0, 0] == pytest.approx(w.mass_a)


def test_tabulated_roundtrip(tmp_path):
    g = Grid2D(6.0, 32)
    w = make_interaction("gaussian", {"height": -1.0, "width": 0.8}, g)
    path = tmp_path / "w.txt"
    write_tabulated(path, g, w.samples())
    g2, values = read_tabulated(path)
    assert g2 == g
    assert np.array_equal(values, w.samples())
    t = tabulated_interaction(values, g2)
    assert t.mass_a == pytest.approx(w.mass_a, rel=1e-6)
    with pytest.raises(ValueError):
        scale(t, 0.5, 4)


def test_tabulated_rejects_odd_function():
    g = Grid2D(4.0, 16)
    X, _ = g.coords
    with pytest.raises(ValueError):
        tabulated_interaction(X * np.exp(-g.r2), g)


def test_tabulated_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1.0\n0 0\n")
    with pytest.raises(ValueError):
        read_tabulated(p)


def test_convolution_of_constant_density():
    g = Grid2D(4.0, 128)
    w = make_interaction("gaussian", {"height": 1.0, "width": 0.3}, g)
    rho = np.full((128, 128), 1 / 16.0)
    out = convolve_density(scale(w, 0.5, 1), rho)
    assert np.allclose(out.values, w.mass_a / 16.0, atol=1e-12)
    with pytest.raises(ValueError):
        convolve_density(scale(w, 0.5, 1), -rho)
