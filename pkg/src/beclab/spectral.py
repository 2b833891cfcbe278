"""Periodic grid geometry, field arithmetic and the one-body operator h = -Laplacian + V.

Fields live on the torus [-L/2, L/2)^2 sampled at n x n points.  Momentum-space
coefficients are taken with respect to the orthonormal plane waves
e^{ik.x}/L, so that sum |c_k|^2 equals the quadrature L^2 norm exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration limit."""


@dataclass(frozen=True)
class Grid2D:
    side_length: float
    points_per_dim: int

    def __post_init__(self):
        n = self.points_per_dim
        if not self.side_length > 0:
            raise ValueError(f"side_length must be positive, got {self.side_length}")
        if n < 8 or n & (n - 1):
            raise ValueError(f"points_per_dim must be a power of two >= 8, got {n}")

    @property
    def n(self) -> int:
        return self.points_per_dim

    @property
    def spacing(self) -> float:
        return self.side_length / self.points_per_dim

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @property
    def nyquist(self) -> float:
        return math.pi * self.points_per_dim / self.side_length

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.side_length + self.spacing * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    @cached_property
    def r2(self) -> np.ndarray:
        x, y = self.coords
        return x**2 + y**2

    @cached_property
    def momenta(self) -> tuple[np.ndarray, np.ndarray]:
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        return np.meshgrid(k, k, indexing="ij")

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.momenta
        return kx**2 + ky**2

    @cached_property
    def _phase(self) -> np.ndarray:
        # shift from the centred sample origin to the FFT origin
        kx, ky = self.momenta
        x0 = self.axis[0]
        return np.exp(-1j * (kx + ky) * x0)

    def to_momentum(self, values: np.ndarray) -> np.ndarray:
        """Coefficients <e^{ikx}/L, u> in FFT ordering."""
        return (self.side_length / self.n**2) * self._phase * np.fft.fft2(values)

    def from_momentum(self, coeffs: np.ndarray) -> np.ndarray:
        return (self.n**2 / self.side_length) * np.fft.ifft2(coeffs / self._phase)

    def apply_laplacian(self, values: np.ndarray) -> np.ndarray:
        """-Laplacian as a Fourier multiplier."""
        return np.fft.ifft2(self.k2 * np.fft.fft2(values))

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        return self.cell_area * np.vdot(u, v)

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(self.cell_area * float(np.sum(np.abs(u) ** 2)))


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        n = self.grid.n
        if vals.shape == (n * n,):
            vals = vals.reshape(n, n)
        if vals.shape != (n, n):
            raise ValueError(f"values must have shape ({n}, {n}), got {vals.shape}")
        object.__setattr__(self, "values", vals)

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def normalized(self) -> "SpectralField":
        nrm = self.norm()
        if nrm == 0 or not np.isfinite(nrm):
            raise ValueError("cannot normalize a zero or non-finite field")
        return SpectralField(self.grid, self.values / nrm)

    def coefficients(self) -> np.ndarray:
        return self.grid.to_momentum(self.values)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2


def _values(u) -> tuple[Grid2D | None, np.ndarray]:
    if isinstance(u, SpectralField):
        vals = u.values
        grid = u.grid
    else:
        vals = np.asarray(u)
        grid = None
    if not np.all(np.isfinite(vals)):
        raise ValueError("field contains NaN or infinite values")
    return grid, vals


def kinetic_energy(u: SpectralField) -> float:
    """<u, -Laplacian u> = sum_k |k|^2 |c_k|^2."""
    grid, vals = _values(u)
    c = grid.to_momentum(vals)
    return float(np.sum(grid.k2 * np.abs(c) ** 2))


def potential_energy(u: SpectralField, V) -> float:
    grid, vals = _values(u)
    V = sample_potential(V, grid)
    return float(grid.cell_area * np.sum(V * np.abs(vals) ** 2))


def quartic_norm(u: SpectralField) -> float:
    """int |u|^4 by trapezoidal quadrature."""
    grid, vals = _values(u)
    return float(grid.cell_area * np.sum(np.abs(vals) ** 4))


# ---------------------------------------------------------------------------
# trapping potentials


@dataclass(frozen=True)
class TrapPotential:
    """V(x) = strength * |x|^exponent, or no potential at all.

    ``exponent`` doubles as the growth exponent s of the trap; the empty trap
    carries s = inf (torus convention).
    """

    strength: float = 0.0
    exponent: float = math.inf

    @classmethod
    def none(cls) -> "TrapPotential":
        return cls()

    @classmethod
    def harmonic(cls, strength: float = 1.0) -> "TrapPotential":
        return cls(strength, 2.0)

    @property
    def is_zero(self) -> bool:
        return self.strength == 0.0 or math.isinf(self.exponent)

    def sample(self, grid: Grid2D) -> np.ndarray:
        if self.is_zero:
            return np.zeros((grid.n, grid.n))
        return self.strength * grid.r2 ** (0.5 * self.exponent)


def sample_potential(V, grid: Grid2D) -> np.ndarray:
    if V is None:
        return np.zeros((grid.n, grid.n))
    if isinstance(V, TrapPotential):
        return V.sample(grid)
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.n, grid.n):
        raise ValueError(f"potential must have shape ({grid.n}, {grid.n})")
    return V


# ---------------------------------------------------------------------------
# one-body eigenbasis


@dataclass(frozen=True, eq=False)
class OneBodyBasis:
    grid: Grid2D
    eigenvalues: np.ndarray
    functions: np.ndarray  # (d, n, n), L^2-orthonormal
    cutoff: float
    potential: TrapPotential
    momenta: np.ndarray | None = None  # (d, 2) integer lattice indices for plane waves

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def is_plane_wave(self) -> bool:
        return self.momenta is not None

    @property
    def modes(self) -> list[tuple[float, SpectralField]]:
        return [(float(e), SpectralField(self.grid, f)) for e, f in zip(self.eigenvalues, self.functions)]

    def truncate(self, d: int) -> "OneBodyBasis":
        if not 1 <= d <= self.dim:
            raise ValueError(f"cannot truncate a {self.dim}-mode basis to {d} modes")
        mom = None if self.momenta is None else self.momenta[:d]
        return OneBodyBasis(self.grid, self.eigenvalues[:d], self.functions[:d], self.cutoff,
                            self.potential, mom)

    def gram(self) -> np.ndarray:
        F = self.functions.reshape(self.dim, -1)
        return self.grid.cell_area * (F.conj() @ F.T)

    def coefficients(self, u) -> np.ndarray:
        """<phi_i, u> for every mode."""
        _, vals = _values(u)
        F = self.functions.reshape(self.dim, -1)
        return self.grid.cell_area * (F.conj() @ vals.ravel())

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(coeffs), self.functions, axes=1)


def apply_h(grid: Grid2D, V: np.ndarray, values: np.ndarray) -> np.ndarray:
    return grid.apply_laplacian(values) + V * values


def _plane_wave_basis(grid: Grid2D, potential: TrapPotential, cutoff: float) -> OneBodyBasis:
    L = grid.side_length
    mmax = int(math.floor(cutoff * L / (2 * np.pi))) + 1
    rng = np.arange(-mmax, mmax + 1)
    mx, my = np.meshgrid(rng, rng, indexing="ij")
    mx, my = mx.ravel(), my.ravel()
    lam = (2 * np.pi / L) ** 2 * (mx**2 + my**2)
    keep = np.sqrt(lam) < cutoff
    mx, my, lam = mx[keep], my[keep], lam[keep]
    order = np.lexsort((my, mx, mx**2 + my**2))
    mx, my, lam = mx[order], my[order], lam[order]
    x, y = grid.coords
    funcs = np.exp(2j * np.pi / L * (mx[:, None, None] * x + my[:, None, None] * y)) / L
    return OneBodyBasis(grid, lam.astype(float), funcs, cutoff, potential,
                        np.stack([mx, my], axis=1))


def _dense_h(grid: Grid2D, V: np.ndarray) -> np.ndarray:
    n2 = grid.n**2
    eye = np.eye(n2).reshape(n2, grid.n, grid.n)
    lap = np.real(np.fft.ifft2(grid.k2 * np.fft.fft2(eye, axes=(1, 2)), axes=(1, 2)))
    H = lap.reshape(n2, n2).T
    H = 0.5 * (H + H.T)
    H[np.diag_indices(n2)] += V.ravel()
    return H


DENSE_LIMIT = 4096


def build_basis(grid: Grid2D, potential: TrapPotential | None = None, cutoff: float = 10.0,
                max_iterations: int = 20000) -> OneBodyBasis:
    """All eigenmodes of h with sqrt(eigenvalue) < cutoff, sorted by eigenvalue."""
    potential = potential or TrapPotential.none()
    if cutoff > grid.nyquist:
        raise ValueError(f"cutoff {cutoff:g} exceeds the grid Nyquist momentum {grid.nyquist:g}; "
                         f"refine the grid")
    if potential.is_zero:
        basis = _plane_wave_basis(grid, potential, cutoff)
        if basis.dim == 0:
            raise ValueError(f"cutoff {cutoff:g} is below the lowest eigenvalue of h")
        return basis

    V = potential.sample(grid)
    n2 = grid.n**2
    K2 = cutoff**2
    if n2 < DENSE_LIMIT:
        lam, vec = np.linalg.eigh(_dense_h(grid, V))
    else:
        op = LinearOperator((n2, n2), dtype=float,
                            matvec=lambda v: np.real(apply_h(grid, V, v.reshape(grid.n, grid.n))).ravel())
        v0 = np.ones(n2) + 1e-3 * np.arange(n2) / n2
        k = 16
        while True:
            k = min(k, n2 - 2)
            try:
                lam, vec = eigsh(op, k=k, which="SA", v0=v0, tol=0, maxiter=max_iterations)
            except Exception as exc:  # ArpackNoConvergence
                raise ConvergenceError(f"eigensolve did not converge with k={k}: {exc}") from exc
            order = np.argsort(lam)
            lam, vec = lam[order], vec[:, order]
            if lam[-1] >= K2 or k == n2 - 2:
                break
            k *= 2
    keep = lam < K2
    lam, vec = lam[keep], vec[:, keep]
    if lam.size == 0:
        raise ValueError(f"cutoff {cutoff:g} is below the lowest eigenvalue of h")
    # fix signs deterministically: largest-magnitude entry positive
    piv = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[piv, np.arange(vec.shape[1])])
    funcs = (vec.T / math.sqrt(grid.cell_area)).reshape(-1, grid.n, grid.n).astype(complex)
    return OneBodyBasis(grid, lam, funcs, cutoff, potential)


def eigen_residuals(basis: OneBodyBasis) -> np.ndarray:
    V = basis.potential.sample(basis.grid)
    out = []
    for lam, f in zip(basis.eigenvalues, basis.functions):
        out.append(basis.grid.norm(apply_h(basis.grid, V, f) - lam * f))
    return np.array(out)


# ---------------------------------------------------------------------------
# momentum bands


@dataclass(frozen=True)
class BandScheme:
    """Bands N^{(i-1)eps} <= sqrt(h) < N^{i eps}, i = 1..M, plus the complement band M+1."""

    epsilon: float = 1 / 38
    band_count: int = 1
    surrogate_N: int = 100

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.band_count < 0:
            raise ValueError("band_count must be nonnegative")
        if self.surrogate_N < 2:
            raise ValueError("surrogate_N must be at least 2")

    @property
    def band_edges(self) -> np.ndarray:
        i = np.arange(1, self.band_count + 1)
        return float(self.surrogate_N) ** (i * self.epsilon)

    @property
    def heavy_threshold(self) -> float:
        return float(self.surrogate_N) ** (1 - 11 * self.epsilon)

    def check_interaction(self, beta: float) -> None:
        if not (self.band_count - 4) * self.epsilon > beta:
            raise ValueError(f"band scheme needs (M - 4) * epsilon > beta; got M={self.band_count}, "
                             f"epsilon={self.epsilon:g}, beta={beta:g}")

    def band_of(self, eigenvalues) -> np.ndarray:
        """1-based band index of each eigenvalue; left-closed, right-open edges."""
        root = np.sqrt(np.maximum(np.asarray(eigenvalues, dtype=float), 0.0))
        return np.searchsorted(self.band_edges, root, side="right") + 1


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector onto a subset of basis modes."""

    modes: tuple[int, ...]
    dim: int

    @property
    def rank(self) -> int:
        return len(self.modes)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.dim, dtype=bool)
        m[list(self.modes)] = True
        return m

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.mask.astype(float))

    def complement(self) -> "Projector":
        return Projector(tuple(int(i) for i in np.flatnonzero(~self.mask)), self.dim)

    @classmethod
    def from_modes(cls, modes, dim: int) -> "Projector":
        return cls(tuple(sorted(int(i) for i in modes)), dim)


def band_assignment(basis: OneBodyBasis, scheme: BandScheme) -> np.ndarray:
    return scheme.band_of(basis.eigenvalues)


def band_projector(basis: OneBodyBasis, scheme: BandScheme, band_index: int) -> Projector:
    if not 1 <= band_index <= scheme.band_count + 1:
        raise ValueError(f"band index must lie in 1..{scheme.band_count + 1}, got {band_index}")
    bands = band_assignment(basis, scheme)
    return Projector(tuple(int(i) for i in np.flatnonzero(bands == band_index)), basis.dim)


def cutoff_projector(basis: OneBodyBasis, K: float) -> Projector:
    """Projector onto modes with sqrt(eigenvalue) < K."""
    root = np.sqrt(np.maximum(basis.eigenvalues, 0.0))
    return Projector(tuple(int(i) for i in np.flatnonzero(root < K)), basis.dim)


def counting_function(basis: OneBodyBasis, K: float) -> int:
    return int(np.count_nonzero(np.sqrt(np.maximum(basis.eigenvalues, 0.0)) < K))


@dataclass(frozen=True)
class BandProfileRow:
    index: int
    dim: int
    cumulative_dim: int
    clr_bound: float
    exceeds: bool


def band_dimension_profile(basis: OneBodyBasis, scheme: BandScheme,
                           trap_exponent: float | None = None,
                           slack: float = 2.0) -> list[BandProfileRow]:
    """Band dimensions next to the envelope C * edge^(2 + 4/s).

    C is fitted as the geometric mean of cumulative_dim / edge^(2+4/s) over the
    nonempty bands whose edge lies inside the basis cutoff (beyond it the count
    is truncated); a band is flagged when its cumulative dimension exceeds
    ``slack`` times the fitted envelope.
    """
    if scheme.band_count == 0:
        return []
    s = basis.potential.exponent if trap_exponent is None else trap_exponent
    power = 2.0 + (0.0 if math.isinf(s) else 4.0 / s)
    bands = band_assignment(basis, scheme)
    edges = scheme.band_edges
    dims = [int(np.count_nonzero(bands == i)) for i in range(1, scheme.band_count + 1)]
    cum = [counting_function(basis, K) for K in edges]
    ratios = [c / K**power for c, K in zip(cum, edges) if c > 0 and K <= basis.cutoff]
    C = math.exp(np.mean(np.log(ratios))) if ratios else 0.0
    rows = []
    for i, (dm, c, K) in enumerate(zip(dims, cum, edges), start=1):
        bound = C * K**power
        rows.append(BandProfileRow(i, dm, c, bound, bool(K <= basis.cutoff and c > slack * bound)))
    return rows


def fit_growth_exponent(basis: OneBodyBasis, cutoffs) -> float:
    """Least-squares slope of log(counting function) against log(cutoff)."""
    cutoffs = np.asarray(cutoffs, dtype=float)
    counts = np.array([counting_function(basis, K) for K in cutoffs], dtype=float)
    if np.any(counts == 0):
        raise ValueError("every cutoff must enclose at least one eigenvalue")
    slope, _ = np.polyfit(np.log(cutoffs), np.log(counts), 1)
    return float(slope)
