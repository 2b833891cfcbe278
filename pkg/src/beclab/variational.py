"""Ground states of the NLS and Hartree functionals, the Gagliardo-Nirenberg
constant, and Hartree stability.

Every minimization runs a preconditioned gradient flow on the L^2 unit sphere:
the tangent direction is the projected, kinetically preconditioned gradient,
step sizes follow Barzilai-Borwein, and each accepted step must not raise the
functional (backtracking by halving otherwise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import optimize

from .potentials import InteractionSpec, ScaledInteraction, convolve
from .spectral import (ConvergenceError, Grid2D, SpectralField, TrapPotential, kinetic_energy,
                       sample_potential)


class StepSizeError(RuntimeError):
    """No admissible step after the maximal number of halvings."""


@dataclass(frozen=True)
class FlowConfig:
    step_size: float = 1.0
    max_iterations: int = 4000
    gradient_tolerance: float = 1e-8
    kinetic_fraction: float = 1.0
    restarts: int = 8
    seed: int = 0
    divergence_floor: float = -1e6
    concentration_threshold: float = 0.25
    max_halvings: int = 10

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.kinetic_fraction <= 1:
            raise ValueError("kinetic_fraction must lie in (0, 1]")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    @staticmethod
    def modified_fraction(N: int) -> float:
        """Kinetic fraction 1 - 1/log N of the modified Hartree functional."""
        return 1.0 - 1.0 / math.log(N)


@dataclass
class MinimizationResult:
    energy: float
    minimizer: SpectralField
    iterations: int
    converged: bool
    unbounded_detected: bool = False
    residual: float = math.nan
    chemical_potential: float = math.nan
    history: list = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {"energy": self.energy, "iterations": self.iterations, "converged": self.converged,
                "unbounded_detected": self.unbounded_detected, "residual": self.residual,
                "chemical_potential": self.chemical_potential}


# ---------------------------------------------------------------------------
# functionals; gradients use the convention dE[u](v) = 2 Re <grad, v>


class EnergyFunctional:
    """f <u,-Lap u> + <u,V u> + interaction, with a local (a/2 |u|^4) or
    Hartree (1/2 (w*|u|^2)|u|^2) interaction."""

    def __init__(self, grid: Grid2D, V=None, *, a: float | None = None, fourier=None,
                 kinetic_fraction: float = 1.0):
        if (a is None) == (fourier is None):
            raise ValueError("give exactly one of a (local) or fourier (Hartree)")
        self.grid = grid
        self.V = sample_potential(V, grid)
        self.a = a
        self.fourier = fourier
        self.f = kinetic_fraction

    def mean_field(self, u: np.ndarray) -> np.ndarray:
        rho = np.abs(u) ** 2
        if self.fourier is None:
            return self.a * rho
        return convolve(self.fourier, rho).real

    def kinetic(self, u) -> float:
        c = np.fft.fft2(u)
        return float(np.sum(self.grid.k2 * np.abs(c) ** 2)) * self.grid.cell_area / self.grid.n**2

    def energy(self, u: np.ndarray) -> float:
        dA = self.grid.cell_area
        rho = np.abs(u) ** 2
        return (self.f * self.kinetic(u) + dA * float(np.sum(self.V * rho))
                + 0.5 * dA * float(np.sum(self.mean_field(u) * rho)))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """The mean-field Hamiltonian applied to u; also the energy gradient."""
        return self.f * self.grid.apply_laplacian(u) + (self.V + self.mean_field(u)) * u

    gradient = apply

    def preconditioner(self, shift: float):
        denom = shift + self.f * self.grid.k2
        return lambda r: np.fft.ifft2(np.fft.fft2(r) / denom)

    def potential_scale(self, u: np.ndarray) -> float:
        return float(np.max(np.abs(self.V + self.mean_field(u))))


class QuotientFunctional:
    """Base for 0-homogeneous ratios minimized on the unit sphere."""

    def __init__(self, grid: Grid2D):
        self.grid = grid

    def kinetic(self, u) -> float:
        c = np.fft.fft2(u)
        return float(np.sum(self.grid.k2 * np.abs(c) ** 2)) * self.grid.cell_area / self.grid.n**2

    def preconditioner(self, shift: float):
        denom = shift + self.grid.k2
        return lambda r: np.fft.ifft2(np.fft.fft2(r) / denom)


class GNQuotient(QuotientFunctional):
    """R[u] = 2 ||grad u||^2 ||u||^2 / ||u||_4^4."""

    def energy(self, u):
        dA = self.grid.cell_area
        T = self.kinetic(u)
        Q = dA * float(np.sum(np.abs(u) ** 4))
        return 2 * T * self.grid.norm(u) ** 2 / Q

    def gradient(self, u):
        dA = self.grid.cell_area
        T = self.kinetic(u)
        m = self.grid.norm(u) ** 2
        Q = dA * float(np.sum(np.abs(u) ** 4))
        lap = self.grid.apply_laplacian(u)
        return 2 * (lap * m + T * u) / Q - 4 * T * m * (np.abs(u) ** 2 * u) / Q**2


class HartreeQuotient(QuotientFunctional):
    """S[u] = int (w*|u|^2)|u|^2 / (2 ||u||^2 ||grad u||^2)."""

    def __init__(self, grid: Grid2D, fourier):
        super().__init__(grid)
        self.fourier = fourier

    def parts(self, u):
        rho = np.abs(u) ** 2
        conv = convolve(self.fourier, rho).real
        D = self.grid.cell_area * float(np.sum(conv * rho))
        return conv, D, self.kinetic(u), self.grid.norm(u) ** 2

    def energy(self, u):
        _, D, T, m = self.parts(u)
        return D / (2 * m * T)

    def gradient(self, u):
        conv, D, T, m = self.parts(u)
        lap = self.grid.apply_laplacian(u)
        return (2 * conv * u) / (2 * m * T) - D * (lap * m + T * u) / (2 * (m * T) ** 2)


def inverse_participation(grid: Grid2D, u: np.ndarray) -> float:
    """n^2 sum p_i^2 with p_i = dA |u_i|^2 / ||u||^2: 1 for a flat field, n^2 for one point."""
    p = grid.cell_area * np.abs(u) ** 2
    p = p / p.sum()
    return float(grid.n**2 * np.sum(p**2))


def sphere_descent(functional, u0: np.ndarray, config: FlowConfig, *, floor: float | None = None,
                   constraint=None, shift: float = 1.0) -> MinimizationResult:
    """Minimize ``functional`` over the L^2 unit sphere.

    ``constraint(u) -> bool`` rejects trial points (treated like an energy
    increase).  The flow stops early when the energy drops below ``floor``.
    """
    grid = functional.grid
    precond = functional.preconditioner(shift)
    inner = lambda a, b: grid.cell_area * float(np.real(np.vdot(a, b)))
    u = u0 / grid.norm(u0)
    E = functional.energy(u)
    history = [E]
    tau = config.step_size
    prev = None
    residual = math.inf
    mu = math.nan
    converged = False
    it = 0
    halvings_total = 0
    adaptive = hasattr(functional, "potential_scale")
    for it in range(1, config.max_iterations + 1):
        if adaptive:
            shift = max(1.0, functional.potential_scale(u))
            precond = functional.preconditioner(shift)
        g = functional.gradient(u)
        mu = inner(u, g)
        r = g - mu * u
        residual = grid.norm(r)
        if not np.isfinite(residual):
            raise ConvergenceError("gradient flow produced non-finite values")
        if residual <= config.gradient_tolerance:
            converged = True
            break
        if (floor is not None and E < floor and inverse_participation(grid, u)
                > config.concentration_threshold * grid.n**2):
            break
        pr = precond(r)
        pu = precond(u)
        d = -(pr - (inner(u, pr) / inner(u, pu)) * pu)
        if prev is not None:
            s = u - prev[0]
            y = r - prev[1]
            sy = inner(s, y)
            if sy > 0:
                # BB1 step in the preconditioned metric
                s_metric = inner(s, np.fft.ifft2(np.fft.fft2(s) * (shift + grid.k2)))
                tau = min(max(s_metric / sy, 1e-4), 1e4)
        accepted = False
        for attempt in range(config.max_halvings + 2):
            trial = u + tau * d
            trial = trial / grid.norm(trial)
            if constraint is None or constraint(trial):
                E_trial = functional.energy(trial)
                if E_trial <= E + 4e-15 * max(1.0, abs(E)):
                    accepted = True
                    break
            # a rejected BB proposal falls back to the base step, then halves
            tau = min(tau, config.step_size) if attempt == 0 else 0.5 * tau
            halvings_total += attempt > 0
        if not accepted:
            if residual <= 100 * config.gradient_tolerance or constraint is not None:
                # stationary to within rounding, or pinned at the constraint boundary
                break
            raise StepSizeError(f"no descent step after {config.max_halvings} halvings "
                                f"(residual {residual:.3e})")
        prev = (u, r)
        u, E = trial, E_trial
        history.append(E)
    else:
        it = config.max_iterations
    # fix the global phase so that the largest entry is real positive
    j = np.argmax(np.abs(u))
    u = u * (abs(u.flat[j]) / u.flat[j])
    return MinimizationResult(E, SpectralField(grid, u), it, converged, False, residual, mu, history)


# ---------------------------------------------------------------------------
# energies


def _field(u) -> SpectralField:
    if not isinstance(u, SpectralField):
        raise TypeError("expected a SpectralField")
    if not np.all(np.isfinite(u.values)):
        raise ValueError("field contains NaN or infinite values")
    if abs(u.norm() - 1) > 1e-10:
        raise ValueError(f"field must be normalized (norm {u.norm():.12g})")
    return u


def nls_energy(u: SpectralField, V, a: float) -> float:
    u = _field(u)
    return EnergyFunctional(u.grid, V, a=a).energy(u.values)


def hartree_energy(u: SpectralField, V, wN, kinetic_fraction: float = 1.0) -> float:
    u = _field(u)
    return EnergyFunctional(u.grid, V, fourier=wN.fourier, kinetic_fraction=kinetic_fraction).energy(u.values)


# ---------------------------------------------------------------------------
# trial fields


def _smooth_random(grid: Grid2D, rng: np.random.Generator, kmax: float) -> np.ndarray:
    c = rng.normal(size=(grid.n, grid.n)) + 1j * rng.normal(size=(grid.n, grid.n))
    c *= np.exp(-grid.k2 / kmax**2)
    return np.fft.ifft2(c)


def initial_guesses(grid: Grid2D, count: int, seed: int, localized: bool = False) -> list[np.ndarray]:
    """Deterministic starts: flat, Gaussians at several widths, smooth random fields."""
    rng = np.random.default_rng(seed)
    L = grid.side_length
    r2 = grid.r2
    starts = []
    if not localized:
        starts.append(np.ones((grid.n, grid.n), dtype=complex))
    widths = L * np.array([0.15, 0.05, 0.3, 0.02, 0.1, 0.2, 0.08, 0.03])
    for w in widths:
        starts.append(np.exp(-r2 / (2 * w**2)).astype(complex))
    while len(starts) < count + 8:
        kmax = (2 * np.pi / L) * rng.uniform(2, 6)
        starts.append(_smooth_random(grid, rng, kmax) + (0 if localized else 0.5))
    # shuffle the tail with the seed so restarts differ between seeds
    head, tail = starts[:2], starts[2:]
    order = rng.permutation(len(tail))
    return (head + [tail[i] for i in order])[:count]


def _best(results: list[MinimizationResult]) -> MinimizationResult:
    return min(results, key=lambda r: (r.energy, r.iterations))


def _minimize(functional, grid, config, floor=None, starts=None) -> MinimizationResult:
    starts = starts if starts is not None else initial_guesses(grid, config.restarts, config.seed)
    results = []
    for u0 in starts:
        res = sphere_descent(functional, u0, config, floor=floor,
                             shift=max(1.0, abs(float(functional.energy(u0 / grid.norm(u0))))))
        ipr = inverse_participation(grid, res.minimizer.values)
        if floor is not None and res.energy < floor and ipr > config.concentration_threshold * grid.n**2:
            res.unbounded_detected = True
            res.converged = False
        results.append(res)
    return _best(results)


def minimize_nls(grid: Grid2D, V, a: float, config: FlowConfig = FlowConfig(), *,
                 divergence_floor: float | None = None) -> MinimizationResult:
    """Ground state of <u,hu> + a/2 int |u|^4 with ||u|| = 1.

    For focusing couplings the flow watches for collapse: energy below the
    divergence floor together with mass concentrated on a handful of grid
    points.  The default floor is grid-relative, see ``collapse_floor``.
    """
    functional = EnergyFunctional(grid, V, a=a)
    floor = divergence_floor
    if floor is None and a < 0:
        floor = collapse_floor(grid, config)
    return _minimize(functional, grid, config, floor)


def collapse_floor(grid: Grid2D, config: FlowConfig) -> float:
    """Divergence floor: the configured value or, if the grid cannot reach it,
    a fraction of the largest kinetic scale the grid represents."""
    kmax2 = grid.nyquist**2
    return max(config.divergence_floor, -0.02 * kmax2)


def minimize_hartree(grid: Grid2D, V, wN, config: FlowConfig = FlowConfig()) -> MinimizationResult:
    """Ground state of the (modified, when kinetic_fraction < 1) Hartree functional."""
    functional = EnergyFunctional(grid, V, fourier=wN.fourier, kinetic_fraction=config.kinetic_fraction)
    return _minimize(functional, grid, config)


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg constant and Hartree stability


def gn_quotient(u: SpectralField) -> float:
    return GNQuotient(u.grid).energy(u.values)


def gn_constant(grid: Grid2D, config: FlowConfig = FlowConfig(gradient_tolerance=1e-5)) -> float:
    """Minimum of 2||grad u||^2 ||u||^2 / ||u||_4^4 over the grid, by gradient flow."""
    if grid.side_length < 20:
        raise ValueError("the Townes profile needs a box of side >= 20")
    functional = GNQuotient(grid)
    u0 = np.exp(-grid.r2 / 2).astype(complex)
    res = sphere_descent(functional, u0, config, shift=1.0)
    if not res.converged:
        raise ConvergenceError(f"GN quotient flow hit the iteration limit "
                               f"(residual {res.residual:.3e} after {res.iterations} steps)")
    return res.energy


def gn_minimizer(grid: Grid2D, config: FlowConfig = FlowConfig(gradient_tolerance=1e-5)) -> MinimizationResult:
    functional = GNQuotient(grid)
    return sphere_descent(functional, np.exp(-grid.r2 / 2).astype(complex), config, shift=1.0)


def _localized(grid: Grid2D, fraction: float = 0.25, leak: float = 1e-6):
    """Reject fields carrying more than ``leak`` of their mass beyond
    ``fraction`` * L from the centre; keeps the flow on functions that
    approximate elements of H^1(R^2)."""
    outside = np.sqrt(grid.r2) > fraction * grid.side_length

    def ok(u):
        rho = np.abs(u) ** 2
        return float(rho[outside].sum() / rho.sum()) <= leak

    return ok


def hartree_stability_index(w: InteractionSpec, config: FlowConfig = FlowConfig(max_iterations=600)) -> float:
    """Smallest value found of int (w*|u|^2)|u|^2 / (2||u||^2 ||grad u||^2).

    This is an upper bound on the infimum over H^1(R^2): starts are dilated
    Gaussian bumps plus smooth localized fields, and iterates are kept
    localized inside the box.  Returns -inf when the flow runs away.
    """
    grid = w.grid
    if w.mass_a == 0 and w.negative_mass == 0:
        return 0.0
    functional = HartreeQuotient(grid, w.fourier)
    L = grid.side_length
    starts = [np.exp(-grid.r2 / (2 * (f * L) ** 2)).astype(complex) for f in (0.03, 0.05, 0.08)]
    scale = max(w.length_scale, grid.spacing)
    starts += [np.exp(-grid.r2 / (2 * (f * scale) ** 2)).astype(complex) for f in (1.0, 3.0)]
    rng = np.random.default_rng(config.seed)
    while len(starts) < config.restarts:
        starts.append(_smooth_random(grid, rng, 2 * np.pi / L * 8) * np.exp(-grid.r2 / (2 * (0.06 * L) ** 2)))
    guard = _localized(grid)
    best = math.inf
    for u0 in starts[: max(config.restarts, 5)]:
        res = sphere_descent(functional, u0, config, constraint=guard, shift=1.0)
        vals = [v for v in res.history if np.isfinite(v)]
        best = min(best, min(vals))
        if best < -1e6:
            return -math.inf
    return float(best)


@dataclass(frozen=True)
class StabilityReport:
    gn_constant: float
    hartree_index: float
    verdict: str
    margin: float
    negative_mass: float
    sufficient_condition: bool

    def record(self) -> dict:
        return asdict(self)


STABILITY_TOLERANCE = 1e-3


def classify_stability(w: InteractionSpec, config: FlowConfig = FlowConfig(max_iterations=600),
                       a_star: float | None = None, gn_grid: Grid2D | None = None) -> StabilityReport:
    """Strictly stable iff the Hartree index exceeds -1 + 1e-3."""
    if a_star is None:
        a_star = gn_constant(gn_grid or Grid2D(20.0, 128))
    index = hartree_stability_index(w, config)
    margin = index + 1.0
    if index > -1 + STABILITY_TOLERANCE:
        verdict = "strictly-stable"
    elif index >= -1 - STABILITY_TOLERANCE:
        verdict = "marginal"
    else:
        verdict = "unstable"
    return StabilityReport(a_star, index, verdict, margin, w.negative_mass, w.negative_mass < a_star)


# ---------------------------------------------------------------------------
# Galerkin functionals in a finite one-body basis


def galerkin_minimize(t: np.ndarray, V: np.ndarray, *, restarts: int = 8, seed: int = 0,
                      tol: float = 1e-10, max_iterations: int = 5000) -> tuple[float, np.ndarray]:
    """min over unit c of c* t c + 1/2 sum V_ijkl conj(c_i c_j) c_k c_l.

    Used for the Hartree and NLS energies restricted to the many-body basis.
    L-BFGS runs on the scale-invariant energy E(c / |c|) in real coordinates.
    """
    d = t.shape[0]
    Vm = np.asarray(V).reshape(d * d, d * d)
    V3 = np.asarray(V).reshape(d, d, d * d)
    rng = np.random.default_rng(seed)
    starts = [np.eye(d)[0].astype(complex)]
    while len(starts) < restarts:
        starts.append(rng.normal(size=d) + 1j * rng.normal(size=d))

    def parts(c):
        cc = np.kron(c, c)
        tc = t @ c
        Vc = V3 @ cc  # (i, j) -> sum_kl V_ijkl c_k c_l
        return tc, Vc, float(np.real(np.vdot(c, tc))), float(np.real(np.vdot(cc, Vm @ cc)))

    def fun(x):
        c = x[:d] + 1j * x[d:]
        n2 = float(np.real(np.vdot(c, c)))
        tc, Vc, kin, quart = parts(c)
        E = kin / n2 + 0.5 * quart / n2**2
        g = tc / n2 - kin * c / n2**2 + (Vc @ c.conj()) / n2**2 - quart * c / n2**3
        return E, np.concatenate([2 * g.real, 2 * g.imag])

    def residual(c):
        tc, Vc, _, _ = parts(c)
        g = tc + Vc @ c.conj()
        return float(np.linalg.norm(g - np.vdot(c, g) * c))

    best = (math.inf, None)
    for c0 in starts:
        c0 = c0 / np.linalg.norm(c0)
        res = optimize.minimize(fun, np.concatenate([c0.real, c0.imag]), jac=True, method="L-BFGS-B",
                                options=dict(maxiter=max_iterations, ftol=1e-16, gtol=tol * 1e-2,
                                             maxcor=30))
        c = res.x[:d] + 1j * res.x[d:]
        c = c / np.linalg.norm(c)
        E = float(res.fun)
        if E < best[0] - 1e-14 * max(1.0, abs(E)):
            best = (E, c)
    E, c = best
    if residual(c) > max(1e-6, 1e3 * tol):
        raise ConvergenceError(f"Galerkin minimization stalled at residual {residual(c):.2e}")
    j = np.argmax(np.abs(c))
    return E, c * (abs(c[j]) / c[j])
