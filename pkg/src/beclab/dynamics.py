"""Many-body Schroedinger flow next to the cubic NLS flow.

NLS: Strang splitting, half-step of V + a|u|^2 in real space around a full
kinetic step in momentum space.  Many-body: Lanczos propagation of H_N
("krylov"), or a Strang splitting of the one-body and interaction parts
("split") whose dt^2 error makes the time-step study meaningful.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .manybody import ManyBodyHamiltonian, hamiltonian_from_tensors, one_body_matrix, reduced_density, \
    symmetrize_tensor, two_body_tensor
from .potentials import scale
from .spectral import ConvergenceError, Grid2D, OneBodyBasis, sample_potential
from .variational import EnergyFunctional


@dataclass(frozen=True)
class PropagatorConfig:
    time_step: float = 5e-5  # split-step size; Strang energy error is O(dt^2)
    final_time: float = 1.0
    record_interval: float = 0.1
    krylov_step: float = 0.01  # Lanczos steps are error-controlled, so they can be long
    krylov_dimension: int = 12
    tolerance: float = 1e-10
    method: str = "krylov"
    max_halvings: int = 10

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")
        if not self.krylov_step > 0:
            raise ValueError("krylov_step must be positive")
        if not self.record_interval >= self.time_step * (1 - 1e-12):
            raise ValueError("record_interval must be at least time_step")
        if not self.final_time >= 0:
            raise ValueError("final_time must be nonnegative")
        if self.method not in ("krylov", "split"):
            raise ValueError("method must be 'krylov' or 'split'")
        if self.krylov_dimension < 2:
            raise ValueError("krylov_dimension must be at least 2")

    def schedule(self, dt: float | None = None) -> tuple[int, int, float]:
        """(steps per record, number of records, actual dt)."""
        dt = self.time_step if dt is None else dt
        per = max(1, round(self.record_interval / dt))
        dt = self.record_interval / per
        records = round(self.final_time / self.record_interval)
        if abs(records * self.record_interval - self.final_time) > 1e-9 * max(1.0, self.final_time):
            raise ValueError("final_time must be a multiple of record_interval")
        return per, records, dt


class StepInstabilityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# NLS


@dataclass(frozen=True, eq=False)
class NLSTrajectory:
    times: np.ndarray
    fields: np.ndarray  # (records, n, n)
    energies: np.ndarray
    masses: np.ndarray
    time_step: float


def _nls_run(grid: Grid2D, u0: np.ndarray, Vs: np.ndarray, a: float, config: PropagatorConfig, dt: float):
    per, nrec, dt = config.schedule(dt)
    kin = np.exp(-1j * dt * grid.k2)
    E = EnergyFunctional(grid, Vs, a=a)
    u = u0.copy()
    m0 = grid.norm(u) ** 2
    fields, energies, masses = [u.copy()], [E.energy(u)], [m0]
    for _ in range(nrec):
        for _ in range(per):
            u = u * np.exp(-0.5j * dt * (Vs + a * np.abs(u) ** 2))
            u = np.fft.ifft2(kin * np.fft.fft2(u))
            u = u * np.exp(-0.5j * dt * (Vs + a * np.abs(u) ** 2))
            m = grid.norm(u) ** 2
            if abs(m - masses[-1]) > 1e-6 * per or not np.isfinite(m):
                return None
        fields.append(u.copy())
        energies.append(E.energy(u))
        masses.append(grid.norm(u) ** 2)
    times = np.arange(nrec + 1) * config.record_interval
    return NLSTrajectory(times, np.array(fields), np.array(energies), np.array(masses), dt)


def evolve_nls(grid: Grid2D, u0, V, a: float, config: PropagatorConfig = PropagatorConfig()) -> NLSTrajectory:
    """Integrate i du/dt = (-Lap + V) u + a |u|^2 u."""
    u0 = np.asarray(getattr(u0, "values", u0), dtype=complex).reshape(grid.n, grid.n)
    if abs(grid.norm(u0) - 1) > 1e-10:
        raise ValueError("initial field must be normalized")
    Vs = sample_potential(V, grid)
    dt = config.time_step
    for _ in range(config.max_halvings + 1):
        out = _nls_run(grid, u0, Vs, a, config, dt)
        if out is not None:
            return out
        dt *= 0.5
    raise StepInstabilityError(f"mass drift persists after {config.max_halvings} time-step halvings")


# ---------------------------------------------------------------------------
# many-body


def lanczos_expm(A, v: np.ndarray, tau: complex, m: int, tol: float) -> tuple[np.ndarray, float, int]:
    """exp(tau A) v for Hermitian A by an m-step Lanczos projection.

    Returns the vector, an a posteriori error estimate and the Krylov
    dimension used (smaller than m after an exact invariant subspace).
    """
    nv = np.linalg.norm(v)
    if nv == 0:
        return v.copy(), 0.0, 0
    D = v.shape[0]
    m = min(m, D)
    Q = np.zeros((m + 1, D), dtype=complex)
    alpha, beta = np.zeros(m), np.zeros(m)
    Q[0] = v / nv
    k = m
    for j in range(m):
        w = A @ Q[j]
        alpha[j] = np.real(np.vdot(Q[j], w))
        # full reorthogonalization keeps small subspaces clean
        w = w - Q[:j + 1].T @ (Q[:j + 1].conj() @ w)
        w = w - Q[:j + 1].T @ (Q[:j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            k = j + 1
            break
        Q[j + 1] = w / beta[j]
    T = np.diag(alpha[:k]) + np.diag(beta[:k - 1], 1) + np.diag(beta[:k - 1], -1)
    e = expm(tau * T)[:, 0]
    err = 0.0 if k < m or k == D else nv * beta[k - 1] * abs(e[k - 1])
    return nv * (Q[:k].T @ e), float(err), k


def _krylov_step(A, psi, tau, m, tol, D):
    while True:
        out, err, _ = lanczos_expm(A, psi, tau, m, tol)
        if err <= tol or m >= D:
            return out, m
        m = min(2 * m, D)


@dataclass(frozen=True, eq=False)
class ManyBodyTrajectory:
    times: np.ndarray
    states: np.ndarray  # (records, D)
    energies: np.ndarray
    norm_deviations: np.ndarray
    time_step: float


def evolve_manybody(psi0, H: ManyBodyHamiltonian, config: PropagatorConfig = PropagatorConfig()) -> ManyBodyTrajectory:
    """Integrate i dPsi/dt = H_N Psi."""
    psi = np.asarray(psi0, dtype=complex).copy()
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("initial state must be normalized")
    A = H.sparse_matrix
    D = A.shape[0]
    per, nrec, dt = config.schedule(config.krylov_step if config.method == "krylov" else None)
    m = config.krylov_dimension
    step_tol = config.tolerance * dt
    if config.method == "split":
        diag = A.diagonal()
        off = (A - sp.diags(diag)).tocsr()
        half = np.exp(-0.5j * dt * diag)
    states, energies, devs = [psi.copy()], [H.energy(psi)], [0.0]
    for _ in range(nrec):
        for _ in range(per):
            if config.method == "krylov":
                psi, m = _krylov_step(A, psi, -1j * dt, m, step_tol, D)
            else:
                psi = half * psi
                psi, m = _krylov_step(off, psi, -1j * dt, m, step_tol, D)
                psi = half * psi
        dev = abs(np.linalg.norm(psi) - 1)
        if dev > max(config.tolerance, 1e-8):
            raise ConvergenceError(f"many-body norm drifted by {dev:.2e}")
        states.append(psi.copy())
        energies.append(H.energy(psi))
        devs.append(dev)
    times = np.arange(nrec + 1) * config.record_interval
    return ManyBodyTrajectory(times, np.array(states), np.array(energies), np.array(devs), dt)


# ---------------------------------------------------------------------------
# comparison


def one_body_trace_distance(gamma1: np.ndarray, basis: OneBodyBasis, u: np.ndarray) -> float:
    """|| gamma - |u><u| ||_1 with gamma living on span(basis) and u anywhere on the grid.

    Both operators act inside span(phi_1..phi_d, u_perp), so the trace norm
    is computed on that (d+1)-dimensional space.
    """
    c = basis.coefficients(u)
    resid = u - basis.synthesize(c)
    r = basis.grid.norm(resid)
    d = len(c)
    G = np.zeros((d + 1, d + 1), dtype=complex)
    G[:d, :d] = gamma1
    v = np.append(c, r)
    G -= np.outer(v, v.conj())
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (G + G.conj().T)))))


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    N: int
    times: np.ndarray
    nls_energies: np.ndarray
    manybody_energies: np.ndarray
    manybody_norm_deviations: np.ndarray
    trace_distances: np.ndarray

    def rows(self) -> list[list]:
        return [[self.N, f"{t:.17g}", f"{td:.17g}", f"{en:.17g}", f"{em:.17g}", f"{nd:.17g}"]
                for t, td, en, em, nd in zip(self.times, self.trace_distances, self.nls_energies,
                                             self.manybody_energies, self.manybody_norm_deviations)]


CSV_HEADER = ["N", "t", "trace_distance", "nls_energy", "mb_energy", "norm_dev"]


def compare_one(u0, beta: float, w, N: int, basis: OneBodyBasis, config: PropagatorConfig,
                nls: NLSTrajectory | None = None) -> TrajectoryRecord:
    grid = basis.grid
    u0 = np.asarray(getattr(u0, "values", u0), dtype=complex).reshape(grid.n, grid.n)
    a = 0.0 if w is None else w.mass_a
    if nls is None:
        nls = evolve_nls(grid, u0, basis.potential, a, config)
    wN = None if w is None else scale(w, beta, N, check_resolution=False)
    t = one_body_matrix(basis)
    V = symmetrize_tensor(two_body_tensor(basis, wN))
    H = hamiltonian_from_tensors(t, V, N)
    c = basis.coefficients(u0)
    psi0 = H.sector.coherent_state(c)
    traj = evolve_manybody(psi0, H, config)
    dist = np.array([one_body_trace_distance(reduced_density(H.sector, s, 1).matrix, basis, u)
                     for s, u in zip(traj.states, nls.fields)])
    return TrajectoryRecord(N, traj.times, nls.energies, traj.energies / N, traj.norm_deviations, dist)


def compare(u0, beta: float, w, N_list, basis: OneBodyBasis, config: PropagatorConfig = PropagatorConfig(),
            map_fn=map) -> list[TrajectoryRecord]:
    """Trace distance between gamma^(1)_{Psi_N(t)} and |u(t)><u(t)| for each N.

    Psi_N(0) is the product state of u0's projection on the shared basis.
    """
    grid = basis.grid
    u0 = np.asarray(getattr(u0, "values", u0), dtype=complex).reshape(grid.n, grid.n)
    nls = evolve_nls(grid, u0, basis.potential, 0.0 if w is None else w.mass_a, config)
    jobs = [(u0, beta, w, int(N), basis, config, nls) for N in N_list]
    return list(map_fn(_compare_job, jobs))


def _compare_job(args):
    return compare_one(*args)


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for rec in records:
            wr.writerows(rec.rows())


def self_convergence_ratio(run, dt: float) -> float:
    """err(dt) / err(dt/2) with err(h) = |x(h) - x(h/2)| at the final time."""
    x1, x2, x4 = run(dt), run(dt / 2), run(dt / 4)
    return float(np.linalg.norm(x1 - x2) / np.linalg.norm(x2 - x4))
