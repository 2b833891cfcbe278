"""Interaction profiles w, their mean-field scalings w_N and periodic convolution.

Fourier transforms use the continuum convention w^(k) = int w(x) e^{-ik.x} dx,
evaluated in closed form (or by radial quadrature) at lattice momenta.  By
Poisson summation this is exactly L^2 times the Fourier series coefficient of
the periodized potential, so convolutions stay exact even when w_N is far
narrower than the grid spacing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .spectral import Grid2D, SpectralField


class ResolutionError(ValueError):
    """The grid is too coarse to sample a scaled interaction in real space."""

    def __init__(self, required_n: int, message: str):
        super().__init__(message)
        self.required_n = required_n


POINTS_PER_WIDTH = 8


def _gauss_legendre(R: float, order: int = 256):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * R * (x + 1), 0.5 * R * w


def _hankel(radial, R: float, kmag: np.ndarray) -> np.ndarray:
    """2 pi int_0^R w(r) J0(kr) r dr by Gauss-Legendre."""
    r, wts = _gauss_legendre(R)
    f = radial(r) * r * wts
    kmag = np.asarray(kmag, dtype=float)
    uniq, inv = np.unique(kmag.ravel(), return_inverse=True)
    vals = np.array([2 * np.pi * np.dot(f, special.j0(k * r)) for k in uniq])
    return vals[inv].reshape(kmag.shape)


# ---------------------------------------------------------------------------
# profile families; each entry: radial(r), fourier(|k|), length scale


def _gaussian(height: float, width: float):
    if not width > 0:
        raise ValueError("gaussian width must be positive")
    radial = lambda r: height * np.exp(-(np.asarray(r) / width) ** 2)
    fourier = lambda k: height * np.pi * width**2 * np.exp(-(width * np.asarray(k)) ** 2 / 4)
    return radial, fourier, width, width * 12


def _bump(height: float, radius: float):
    if not radius > 0:
        raise ValueError("bump radius must be positive")

    def radial(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = r < radius
        s = (r[inside] / radius) ** 2
        out[inside] = height * np.exp(1.0 - 1.0 / (1.0 - s))
        return out

    fourier = lambda k: _hankel(radial, radius, k)
    return radial, fourier, radius, radius


def _mixture(height1: float, width1: float, height2: float, width2: float):
    r1, f1, _, s1 = _gaussian(height1, width1)
    r2, f2, _, s2 = _gaussian(height2, width2)
    radial = lambda r: r1(r) - r2(r)
    fourier = lambda k: f1(k) - f2(k)
    return radial, fourier, min(width1, width2), max(s1, s2)


PROFILES = {
    "gaussian": (_gaussian, ("height", "width")),
    "compact-bump": (_bump, ("height", "radius")),
    "signed-mixture": (_mixture, ("height1", "width1", "height2", "width2")),
}


@dataclass(frozen=True, eq=False)
class InteractionSpec:
    """An even interaction w with its Fourier table on the grid lattice."""

    profile: str
    params: dict
    grid: Grid2D
    fourier: np.ndarray
    mass_a: float
    negative_mass: float
    l1_norm: float
    l2_norm: float
    length_scale: float
    _radial: object = field(repr=False, default=None)
    _fourier_fn: object = field(repr=False, default=None)
    _samples: np.ndarray | None = field(repr=False, default=None)

    def radial(self, r):
        if self._radial is None:
            raise ValueError("tabulated interactions have no closed-form radial profile")
        return self._radial(r)

    def fourier_at(self, kmag) -> np.ndarray:
        """Continuum transform at arbitrary |k|."""
        if self._fourier_fn is None:
            raise ValueError("tabulated interactions are only known on the grid lattice")
        return self._fourier_fn(kmag)

    def samples(self) -> np.ndarray:
        if self._samples is not None:
            return self._samples
        return self.radial(np.sqrt(self.grid.r2))

    @property
    def amplitude(self) -> float:
        return float(self.params.get("height", self.params.get("height1", 0.0)))


def _radial_norms(radial, support: float):
    r = lambda f: integrate.quad(lambda t: 2 * np.pi * t * f(t), 0, support, limit=400,
                                 epsabs=1e-14, epsrel=1e-12)[0]
    neg = r(lambda t: max(0.0, -float(radial(np.array([t]))[0])))
    l1 = r(lambda t: abs(float(radial(np.array([t]))[0])))
    l2 = math.sqrt(r(lambda t: float(radial(np.array([t]))[0]) ** 2))
    return neg, l1, l2


def make_interaction(profile: str, params: dict, grid: Grid2D) -> InteractionSpec:
    """Build an even interaction from a named family.

    gaussian: height * exp(-|x|^2 / width^2), mass height * pi * width^2.
    compact-bump: height * exp(1 - 1/(1 - |x|^2/radius^2)) inside the disk.
    signed-mixture: gaussian(height1, width1) - gaussian(height2, width2).
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    params = dict(params)
    center = params.pop("center", (0.0, 0.0))
    if np.any(np.asarray(center, dtype=float) != 0.0):
        raise ValueError("interaction must be even: a nonzero center breaks w(x) = w(-x)")
    factory, names = PROFILES[profile]
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"profile {profile!r} missing parameters {missing}")
    extra = set(params) - set(names)
    if extra:
        raise ValueError(f"profile {profile!r} got unexpected parameters {sorted(extra)}")
    radial, fourier_fn, scale, support = factory(*(float(params[n]) for n in names))
    mass = float(fourier_fn(np.array(0.0)))
    neg, l1, l2 = _radial_norms(radial, support)
    table = fourier_fn(np.sqrt(grid.k2))
    return InteractionSpec(profile, {n: float(params[n]) for n in names}, grid, table, mass,
                           neg, l1, l2, scale, radial, fourier_fn)


def tabulated_interaction(samples: np.ndarray, grid: Grid2D, tol: float = 1e-12) -> InteractionSpec:
    """Interaction given by real-space samples on the centred grid."""
    w = np.asarray(samples, dtype=float).reshape(grid.n, grid.n)
    # reflection x -> -x maps index i to (n - i) mod n on the centred grid
    flipped = np.roll(w[::-1, ::-1], 1, axis=(0, 1))
    if np.max(np.abs(w - flipped)) > tol * max(1.0, np.max(np.abs(w))):
        raise ValueError("tabulated interaction is not even under x -> -x")
    w = 0.5 * (w + flipped)
    dA = grid.cell_area
    table = dA * np.fft.fft2(np.fft.ifftshift(w))
    table = np.real(table)
    mass = float(dA * w.sum())
    return InteractionSpec("tabulated", {}, grid, table, mass,
                           float(dA * np.sum(np.maximum(-w, 0))), float(dA * np.abs(w).sum()),
                           float(math.sqrt(dA * np.sum(w**2))), grid.spacing, None, None, w)


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True, eq=False)
class ScaledInteraction:
    """w_N = s^2 w(s x) with s = N^beta (or exp(N^(1-kappa)) for the sub-GP scaling)."""

    base: InteractionSpec
    beta: float
    particle_number: int
    sub_gp_kappa: float | None = None

    @property
    def grid(self) -> Grid2D:
        return self.base.grid

    @property
    def scale_factor(self) -> float:
        N = float(self.particle_number)
        if self.sub_gp_kappa is not None:
            return math.exp(N ** (1 - self.sub_gp_kappa))
        return N**self.beta

    @property
    def mass_a(self) -> float:
        return self.base.mass_a

    @property
    def width(self) -> float:
        return self.base.length_scale / self.scale_factor

    @property
    def required_points(self) -> int:
        need = POINTS_PER_WIDTH * self.grid.side_length / self.width
        return 1 << max(3, math.ceil(math.log2(need)))

    @property
    def resolved(self) -> bool:
        return self.grid.n >= POINTS_PER_WIDTH * self.grid.side_length / self.width

    @property
    def fourier(self) -> np.ndarray:
        return self._table

    def fourier_at(self, kmag) -> np.ndarray:
        return self.base.fourier_at(np.asarray(kmag) / self.scale_factor)

    def samples(self) -> np.ndarray:
        if not self.resolved:
            raise ResolutionError(self.required_points,
                                  f"grid n={self.grid.n} cannot resolve w_N of width {self.width:.3g}; "
                                  f"need n >= {self.required_points}")
        s = self.scale_factor
        return s**2 * self.base.radial(s * np.sqrt(self.grid.r2))

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.particle_number < 1:
            raise ValueError("particle number must be positive")
        if self.sub_gp_kappa is not None and not 2 / 3 < self.sub_gp_kappa < 1:
            raise ValueError("sub-GP exponent kappa must lie in (2/3, 1)")
        s = self.scale_factor
        if s == 1.0:
            table = self.base.fourier
        else:
            table = self.base.fourier_at(np.sqrt(self.grid.k2) / s)
        object.__setattr__(self, "_table", table)


def scale(spec: InteractionSpec, beta: float, N: int, *, kappa: float | None = None,
          check_resolution: bool = True) -> ScaledInteraction:
    """Mean-field scaling N^{2beta} w(N^beta x).

    With ``check_resolution`` the grid must place POINTS_PER_WIDTH samples
    across the scaled width; pure Fourier-space work (Hartree energies,
    two-body tensors) may skip the check since the transform is analytic.
    """
    if spec.profile == "tabulated" and not (N == 1 and kappa is None):
        raise ValueError("tabulated interactions cannot be rescaled")
    wN = ScaledInteraction(spec, beta, int(N), kappa)
    if check_resolution and not wN.resolved:
        raise ResolutionError(wN.required_points,
                              f"grid n={spec.grid.n} (L={spec.grid.side_length:g}) cannot resolve "
                              f"w_N of width {wN.width:.3g}; need n >= {wN.required_points}")
    return wN


def convolve(fourier: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Periodic convolution (w * f) from a Fourier table of w."""
    return np.fft.ifft2(fourier * np.fft.fft2(f))


def convolve_density(wN, rho) -> SpectralField:
    """(w_N * rho)(x) for a real, nonnegative density on the grid."""
    grid = wN.grid
    rho = rho.values if isinstance(rho, SpectralField) else np.asarray(rho)
    if np.iscomplexobj(rho):
        if np.max(np.abs(rho.imag)) > 1e-12 * max(1.0, np.max(np.abs(rho))):
            raise ValueError("density must be real")
        rho = rho.real
    if not np.all(np.isfinite(rho)):
        raise ValueError("density contains NaN or infinite values")
    if rho.min() < -1e-12 * max(1.0, rho.max()):
        raise ValueError("density must be nonnegative")
    out = convolve(wN.fourier, rho)
    return SpectralField(grid, out.real)


# ---------------------------------------------------------------------------
# tabulated text format: header "L n", then n^2 reals in row-major order


def write_tabulated(path, grid: Grid2D, values: np.ndarray) -> None:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        raise ValueError("tabulated format stores real samples")
    lines = [f"{grid.side_length:.17g} {grid.n}"]
    for row in values.reshape(grid.n, grid.n):
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tabulated(path) -> tuple[Grid2D, np.ndarray]:
    text = Path(path).read_text().split("\n", 1)
    head = text[0].split()
    if len(head) != 2:
        raise ValueError(f"{path}: header must be 'L n'")
    grid = Grid2D(float(head[0]), int(head[1]))
    data = np.array(text[1].split(), dtype=float) if len(text) > 1 else np.array([])
    if data.size != grid.n**2:
        raise ValueError(f"{path}: expected {grid.n ** 2} samples, found {data.size}")
    return grid, data.reshape(grid.n, grid.n)
