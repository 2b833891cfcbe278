"""Lower-symbol (Husimi) measures for symmetric states and de Finetti bound checks.

For a symmetric M-particle state Gamma over d modes the lower symbol is
z -> <z^{(x)M}|Gamma|z^{(x)M}> on the unit sphere of C^d.  Normalizing it
against the uniform sphere measure gives a probability measure on pure
one-body states whose marginals approximate those of Gamma.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm, qmc

from .fock import FockSector
from .manybody import _factor, reduced_density

CHUNK = 8192


class DegenerateStateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeFinettiMeasure:
    """Atoms |z><z| with weights; ``vectors`` has shape (atoms, d)."""

    weights: np.ndarray
    vectors: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def gammas(self) -> np.ndarray:
        return np.einsum("ai,aj->aij", self.vectors, self.vectors.conj())

    def moment(self, k: int) -> np.ndarray:
        """Integral of gamma^{(x)k} d mu, pair index i*d + j for k = 2."""
        Z = self.vectors
        if k == 1:
            return (Z * self.weights[:, None]).T @ Z.conj()
        if k == 2:
            ZZ = np.einsum("ai,aj->aij", Z, Z).reshape(len(Z), -1)
            return (ZZ * self.weights[:, None]).T @ ZZ.conj()
        raise ValueError("k must be 1 or 2")

    def validate(self, tol: float = 1e-10) -> None:
        if np.any(self.weights < 0):
            raise ValueError("negative weight")
        if abs(self.weights.sum() - 1) > tol:
            raise ValueError(f"weights sum to {self.weights.sum():.15g}")
        norms = np.sum(np.abs(self.vectors) ** 2, axis=1)
        if np.max(np.abs(norms - 1)) > tol:
            raise ValueError("an atom is not a unit-trace density matrix")


def _log_multinomial(states: np.ndarray) -> np.ndarray:
    M = states[0].sum()
    return gammaln(M + 1) - gammaln(states + 1).sum(axis=1)


def coherent_amplitudes(sector: FockSector, Z: np.ndarray) -> np.ndarray:
    """<n|z^{(x)M}> for each row z of Z; shape (len(Z), D)."""
    n = sector.states
    logm = 0.5 * _log_multinomial(n)
    out = np.ones((len(Z), sector.dim), dtype=complex)
    for i in range(sector.mode_count):
        out *= Z[:, i:i + 1] ** n[None, :, i]
    return out * np.exp(logm)[None, :]


def sphere_points(d: int, count: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points mapped to uniformly distributed unit vectors of C^d."""
    sob = qmc.Sobol(2 * d, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(count)))
    u = sob.random_base2(m)[:count]
    g = norm.ppf(np.clip(u, 1e-16, 1 - 1e-16))
    z = g[:, :d] + 1j * g[:, d:]
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def lower_symbol(sector: FockSector, state, Z: np.ndarray) -> np.ndarray:
    Y = _factor(sector, state)
    vals = np.empty(len(Z))
    for s in range(0, len(Z), CHUNK):
        amp = coherent_amplitudes(sector, Z[s:s + CHUNK])
        vals[s:s + CHUNK] = np.sum(np.abs(amp.conj() @ Y) ** 2, axis=1)
    return vals


def husimi_measure(sector: FockSector, state, sample_count: int = 1 << 14, seed: int = 0) -> DeFinettiMeasure:
    Z = sphere_points(sector.mode_count, sample_count, seed)
    symbol = lower_symbol(sector, state, Z)
    total = symbol.sum()
    if not total > 1e-300 * len(symbol):
        raise DegenerateStateError("lower symbol vanishes on every sample point")
    return DeFinettiMeasure(symbol / total, Z, seed)


def delta_measure(u) -> DeFinettiMeasure:
    u = np.asarray(u, dtype=complex)
    return DeFinettiMeasure(np.ones(1), (u / np.linalg.norm(u))[None, :])


def marginal_gap(sector: FockSector, state, mu: DeFinettiMeasure, k: int) -> np.ndarray:
    G = reduced_density(sector, state, k).matrix - mu.moment(k)
    return 0.5 * (G + G.conj().T)


def trace_norm(G: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(G))))


@dataclass(frozen=True)
class BoundCheckRecord:
    d: int
    M: int
    seed: int
    lhs: float
    theorem_bound: float
    husimi_bound: float
    sat_theorem: bool
    sat_husimi: bool

    def row(self) -> list:
        return [self.d, self.M, self.seed, f"{self.lhs:.17g}", f"{self.theorem_bound:.17g}",
                f"{self.husimi_bound:.17g}", int(self.sat_theorem), int(self.sat_husimi)]


CSV_HEADER = [f.name for f in fields(BoundCheckRecord)]


def _within(value: float, bound: float) -> bool:
    # rounding slack so that an exact zero against a zero bound counts as satisfied
    return value <= bound + 1e-13 * max(1.0, bound)


def check_bound(sector: FockSector, state, mu: DeFinettiMeasure, A: np.ndarray, B: np.ndarray,
                seed: int = -1, gap: np.ndarray | None = None) -> BoundCheckRecord:
    A, B = np.asarray(A), np.asarray(B)
    for X in (A, B):
        if np.max(np.abs(X - X.conj().T)) > 1e-12:
            raise ValueError("A and B must be Hermitian")
    d, M = sector.mode_count, sector.particle_count
    if gap is None:
        gap = marginal_gap(sector, state, mu, 2)
    lhs = float(abs(np.trace(np.kron(A, B) @ gap)))
    scale = np.linalg.norm(A, 2) * np.linalg.norm(B, 2)
    theorem = math.sqrt(2 * math.log(d) / M) * scale
    husimi = 4 * d / M * scale
    return BoundCheckRecord(d, M, seed, lhs, theorem, husimi, _within(lhs, theorem), _within(lhs, husimi))


def random_observable(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random Hermitian matrix with unit operator norm."""
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = 0.5 * (X + X.conj().T)
    return H / np.linalg.norm(H, 2)


def random_symmetric_state(sector: FockSector, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=sector.dim) + 1j * rng.normal(size=sector.dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SweepSummary:
    checks: int
    valid_measures: int
    product_zero: int
    husimi_rate: float
    theorem_rate: float


def definetti_sweep(dims, Ms, states_per_cell: int = 50, sample_count: int = 1 << 14, seed: int = 0,
                    observables_per_state: int = 1):
    """Bound checks on random pure symmetric states; returns (records, summary)."""
    records, valid, product_zero, products = [], 0, 0, 0
    for d in dims:
        for M in Ms:
            sector = FockSector(d, M)
            for s in range(states_per_cell):
                rng = np.random.default_rng([seed, d, M, s])
                psi = random_symmetric_state(sector, rng)
                mu = husimi_measure(sector, psi, sample_count, seed=int(rng.integers(2**31)))
                mu.validate()
                valid += 1
                gap = marginal_gap(sector, psi, mu, 2)
                for _ in range(observables_per_state):
                    A, B = random_observable(d, rng), random_observable(d, rng)
                    records.append(check_bound(sector, psi, mu, A, B, seed=s, gap=gap))
                # product state with its exact delta measure
                u = rng.normal(size=d) + 1j * rng.normal(size=d)
                prod = sector.coherent_state(u)
                rec = check_bound(sector, prod, delta_measure(u), random_observable(d, rng),
                                  random_observable(d, rng), seed=s)
                products += 1
                product_zero += rec.lhs <= 1e-13
    n = len(records)
    summary = SweepSummary(n, valid, product_zero,
                           sum(r.sat_husimi for r in records) / n, sum(r.sat_theorem for r in records) / n)
    return records, summary


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for r in records:
            wr.writerow(r.row())
