"""Second-quantized H_N in a truncated one-body basis.

H_N = sum_ij t_ij a+_i a_j + 1/(N-1) * 1/2 sum_ijkl V_ijkl a+_i a+_j a_l a_k
with V_ijkl = <phi_i phi_j | w_N | phi_k phi_l>.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .fock import SECTOR_CAP, FockSector, SectorSizeError, reduce_pair, sector_dimension
from .spectral import BandScheme, ConvergenceError, OneBodyBasis, Projector, cutoff_projector

DENSE_EIG_LIMIT = 600


class SectorSupportError(ValueError):
    """State is not supported in the requested occupation sector."""


class IdentityViolationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# one- and two-body matrix elements


def one_body_matrix(basis: OneBodyBasis) -> np.ndarray:
    return np.diag(basis.eigenvalues.astype(complex))


def _pair_densities(basis: OneBodyBasis, left, right) -> np.ndarray:
    F = basis.functions
    return (F[left].conj()[:, None] * F[right][None, :]).reshape(len(left) * len(right), -1)


def _plane_wave_block(basis: OneBodyBasis, fourier_at, X, Y) -> np.ndarray:
    L = basis.grid.side_length
    m = basis.momenta
    mx, my = m[X], m[Y]
    # momentum conservation m_i + m_j = m_k + m_l, transfer q = k_i - k_k
    total_l = mx[:, None, None, None] + my[None, :, None, None]
    total_r = mx[None, None, :, None] + my[None, None, None, :]
    conserved = np.all(total_l == total_r, axis=-1)
    q = (mx[:, None, :] - mx[None, :, :]).astype(float)
    qmag = (2 * np.pi / L * np.sqrt(np.sum(q**2, axis=-1)))[:, None, :, None]
    V = np.zeros(conserved.shape, dtype=complex)
    V[conserved] = np.broadcast_to(fourier_at(qmag), conserved.shape)[conserved] / L**2
    return V


def two_body_block(basis: OneBodyBasis, fourier, X=None, Y=None, *, fourier_at=None) -> np.ndarray:
    """V[i, j, k, l] for i, k in X and j, l in Y.

    ``fourier`` is the lattice table of w_N's transform; for plane-wave bases
    ``fourier_at`` (continuum transform at |k|) is used through momentum
    conservation instead of FFT convolutions.
    """
    X = np.arange(basis.dim) if X is None else np.asarray(X, dtype=int)
    Y = X if Y is None else np.asarray(Y, dtype=int)
    if basis.is_plane_wave and fourier_at is not None:
        return _plane_wave_block(basis, fourier_at, X, Y)
    grid = basis.grid
    n = grid.n
    rho_x = _pair_densities(basis, X, X)
    rho_y = _pair_densities(basis, Y, Y).reshape(-1, n, n)
    conv = np.fft.ifft2(np.asarray(fourier) * np.fft.fft2(rho_y), axes=(-2, -1)).reshape(len(rho_y), -1)
    M = grid.cell_area * (rho_x @ conv.T)
    # M[(i,k), (j,l)] -> V[i, j, k, l]
    return M.reshape(len(X), len(X), len(Y), len(Y)).transpose(0, 2, 1, 3)


def two_body_tensor(basis: OneBodyBasis, wN) -> np.ndarray:
    if wN is None:
        d = basis.dim
        return np.zeros((d, d, d, d), dtype=complex)
    fourier_at = getattr(wN, "fourier_at", None)
    try:
        if fourier_at is not None:
            fourier_at(np.zeros(1))
    except ValueError:
        fourier_at = None
    return two_body_block(basis, wN.fourier, fourier_at=fourier_at)


def contact_tensor(basis: OneBodyBasis, a: float) -> np.ndarray:
    """Tensor of the contact interaction a * delta(x - y)."""
    const = lambda k: np.full(np.shape(k), float(a))
    return two_body_block(basis, np.full((basis.grid.n, basis.grid.n), float(a)), fourier_at=const)


def symmetrize_tensor(V: np.ndarray) -> np.ndarray:
    """Project onto the symmetries of a two-body kernel with even, real w."""
    V = 0.5 * (V + V.transpose(1, 0, 3, 2))
    return 0.5 * (V + V.transpose(2, 3, 0, 1).conj())


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass(eq=False)
class ManyBodyHamiltonian:
    sector: FockSector
    one_body: np.ndarray
    two_body: np.ndarray
    coupling: float
    sparse_matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.sector.dim

    def hermiticity_error(self) -> float:
        diff = self.sparse_matrix - self.sparse_matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def energy(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.sparse_matrix @ psi)) / np.vdot(psi, psi).real)


def hamiltonian_from_tensors(one_body: np.ndarray, two_body: np.ndarray, N: int,
                             cap: int = SECTOR_CAP) -> ManyBodyHamiltonian:
    d = one_body.shape[0]
    sector = FockSector(d, N, cap=cap)
    D = sector.dim
    if N >= 1:
        S = sector.annihilator(1)
        Dr = sector_dimension(N - 1, d)
        H = S.conj().T @ sp.kron(sp.csr_matrix(one_body), sp.identity(Dr, format="csr")) @ S
    else:
        H = sp.csr_matrix((D, D), dtype=complex)
    coupling = 1.0 / (N - 1) if N >= 2 else 0.0
    if N >= 2 and np.any(two_body != 0):
        T = sector.annihilator(2)
        Dr = sector_dimension(N - 2, d)
        Vmat = sp.csr_matrix(two_body.reshape(d * d, d * d))
        H = H + (0.5 * coupling) * (T.conj().T @ sp.kron(Vmat, sp.identity(Dr, format="csr")) @ T)
    H = sp.csr_matrix(H, dtype=complex)
    H = 0.5 * (H + H.conj().T)
    H.sum_duplicates()
    H.eliminate_zeros()
    return ManyBodyHamiltonian(sector, np.asarray(one_body), np.asarray(two_body), coupling, H.tocsr())


def assemble(basis: OneBodyBasis, wN, N: int, cap: int = SECTOR_CAP) -> ManyBodyHamiltonian:
    """H_N on the symmetric sector over the modes of ``basis``; wN None means w = 0."""
    if basis.dim < 1:
        raise ValueError("basis must contain at least one mode")
    if sector_dimension(N, basis.dim) > cap:
        raise SectorSizeError(f"sector dimension C(N+d-1, N) = C({N + basis.dim - 1}, {N}) = "
                              f"{sector_dimension(N, basis.dim)} exceeds the cap {cap}")
    return hamiltonian_from_tensors(one_body_matrix(basis), symmetrize_tensor(two_body_tensor(basis, wN)), N, cap)


def ground_state(H: ManyBodyHamiltonian, tol: float = 1e-9, seed: int = 0,
                 max_iterations: int | None = None) -> tuple[float, np.ndarray]:
    """Lowest eigenpair; returns (energy per particle, normalized vector)."""
    A = H.sparse_matrix
    D = A.shape[0]
    N = max(H.sector.particle_count, 1)
    if D <= DENSE_EIG_LIMIT:
        w, v = np.linalg.eigh(A.toarray())
        lam, psi = w[0], v[:, 0]
    else:
        v0 = np.random.default_rng(seed).normal(size=D).astype(complex)
        try:
            w, v = eigsh(A, k=1, which="SA", v0=v0, tol=tol * 1e-2, maxiter=max_iterations)
        except Exception as exc:  # ArpackNoConvergence carries partial results
            raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
        lam, psi = w[0], v[:, 0]
    psi = psi / np.linalg.norm(psi)
    # fix the global phase on the largest component
    j = np.argmax(np.abs(psi))
    psi = psi * (abs(psi[j]) / psi[j])
    residual = np.linalg.norm(A @ psi - lam * psi)
    if residual > max(tol, 1e-12 * max(1.0, abs(lam))) * 10:
        raise ConvergenceError(f"ground state residual {residual:.3e} above tolerance {tol:.1e}")
    return float(lam) / N, psi


def dump_coordinates(H: ManyBodyHamiltonian, path) -> None:
    """Write the sparse matrix as `row col real imag` lines."""
    C = H.sparse_matrix.tocoo()
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def read_coordinates(path, dim: int) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(dim, dim))


# ---------------------------------------------------------------------------
# states and reduced density matrices


def _factor(sector: FockSector, state) -> np.ndarray:
    """Return Y with state = Y Y^* (pure vector -> one column)."""
    s = np.asarray(state, dtype=complex)
    if s.ndim == 1:
        if s.shape[0] != sector.dim:
            raise ValueError(f"state has length {s.shape[0]}, sector dimension is {sector.dim}")
        return s[:, None]
    if s.shape != (sector.dim, sector.dim):
        raise ValueError("density matrix must be D x D")
    # a positive matrix vanishes outside the rows with nonzero diagonal
    on = np.flatnonzero(np.abs(np.diagonal(s)) > 0)
    block = s[np.ix_(on, on)]
    w, U = np.linalg.eigh(0.5 * (block + block.conj().T))
    if w.size and w.min() < -1e-10 * max(1.0, w.max()):
        raise ValueError("density matrix is not positive semidefinite")
    keep = w > 1e-15 * max(1.0, w.max()) if w.size else np.zeros(0, dtype=bool)
    Y = np.zeros((sector.dim, int(keep.sum())), dtype=complex)
    Y[on] = U[:, keep] * np.sqrt(w[keep])
    return Y


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    order: int
    matrix: np.ndarray
    source_norm: float

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def reduced_density(sector: FockSector, state, k: int) -> ReducedDensityMatrix:
    """k-particle marginal (k = 1 or 2), normalized so that a unit state has unit trace.

    Index convention: gamma1[i, j] = <phi_i|gamma|phi_j>, gamma2[(i,j),(k,l)]
    with pair index i*d + j.
    """
    N = sector.particle_count
    if k not in (1, 2):
        raise ValueError("only k = 1 and k = 2 marginals are supported")
    if k > N:
        raise ValueError(f"cannot take a {k}-particle marginal of an {N}-particle state")
    Y = _factor(sector, state)
    A = reduce_pair(sector, Y, k)
    A = A.reshape(A.shape[0], -1)
    G = (A @ A.conj().T) / math.perm(N, k)
    G = 0.5 * (G + G.conj().T)
    return ReducedDensityMatrix(k, G, float(np.sqrt(np.sum(np.abs(Y) ** 2))))


def condensate_fraction(gamma1) -> float:
    M = gamma1.matrix if isinstance(gamma1, ReducedDensityMatrix) else np.asarray(gamma1)
    return float(np.linalg.eigvalsh(M)[-1])


def product_state(sector: FockSector, coeffs) -> np.ndarray:
    return sector.coherent_state(coeffs)


# ---------------------------------------------------------------------------
# sector decomposition


@dataclass(frozen=True, eq=False)
class SectorDecomposition:
    scheme: BandScheme | None
    bands: np.ndarray
    components: dict
    heavy_set: dict

    def norms(self) -> dict:
        return {J: float(np.linalg.norm(v)) for J, v in self.components.items()}

    def pythagoras_error(self, psi) -> float:
        total = sum(np.linalg.norm(v) ** 2 for v in self.components.values())
        return abs(total - np.linalg.norm(psi) ** 2)


def band_occupancy(sector: FockSector, bands: np.ndarray, band_count: int) -> np.ndarray:
    """(D, band_count) array of particles per band for every occupation vector."""
    bands = np.asarray(bands, dtype=int)
    out = np.zeros((sector.dim, band_count), dtype=np.int64)
    for b in range(1, band_count + 1):
        out[:, b - 1] = sector.states[:, bands == b].sum(axis=1)
    return out


def sector_decompose(sector: FockSector, psi, scheme: BandScheme | None = None, *, basis=None,
                     bands=None, threshold: float | None = None) -> SectorDecomposition:
    """Split psi by how many particles sit in each band P_1..P_{M+1}.

    Bands come from ``scheme`` applied to ``basis`` eigenvalues, or are given
    directly as 1-based labels per mode.
    """
    if bands is None:
        if scheme is None or basis is None:
            raise ValueError("need either explicit band labels or a scheme with a basis")
        bands = scheme.band_of(basis.eigenvalues)
    bands = np.asarray(bands, dtype=int)
    if len(bands) != sector.mode_count:
        raise ValueError("one band label per mode required")
    count = int(bands.max()) if scheme is None else scheme.band_count + 1
    if threshold is None:
        threshold = scheme.heavy_threshold if scheme is not None else math.inf
    psi = np.asarray(psi, dtype=complex)
    occ = band_occupancy(sector, bands, count)
    keys, inverse = np.unique(occ, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    components, heavy = {}, {}
    for g, key in enumerate(keys):
        J = tuple(int(x) for x in key)
        v = np.zeros_like(psi)
        mask = inverse == g
        v[mask] = psi[mask]
        if not np.any(v):
            continue
        components[J] = v
        heavy[J] = frozenset(i for i in range(1, count) if J[i - 1] >= threshold)
    return SectorDecomposition(scheme, bands, components, heavy)


def _support(sector: FockSector, Y: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    weight = np.sum(np.abs(Y) ** 2, axis=1)
    return weight > tol * max(weight.max(), 1e-300)


def sector_counts(sector: FockSector, state, *projectors: Projector) -> tuple[int, ...]:
    """Particle numbers in each projector, required to be sharp on the support."""
    Y = _factor(sector, state)
    on = _support(sector, Y)
    counts = []
    for P in projectors:
        c = np.unique(sector.states[on][:, P.mask].sum(axis=1))
        if len(c) != 1:
            raise SectorSupportError(f"state mixes occupation numbers {sorted(c.tolist())} in one projector")
        counts.append(int(c[0]))
    return tuple(counts)


def verify_sector_trace(sector: FockSector, state, P1: Projector, P2: Projector) -> float:
    """Tr(P1 x P2 gamma2) for a state with sharp particle numbers j1 in P1, j2 in P2.

    Equals j1 j2 / (N (N - 1)) for a unit state.
    """
    if np.any(P1.mask & P2.mask):
        raise ValueError("P1 and P2 must be orthogonal")
    j1, j2 = sector_counts(sector, state, P1, P2)
    if j1 < 1 or j2 < 1:
        raise SectorSupportError(f"need at least one particle in each projector, got j1={j1}, j2={j2}")
    N = sector.particle_count
    Y = _factor(sector, state)
    Y = Y / math.sqrt(np.sum(np.abs(Y) ** 2))
    A = reduce_pair(sector, Y, 2)  # (d*d, D', r)
    d = sector.mode_count
    pairs = [i * d + j for i in P1.modes for j in P2.modes]
    return float(np.sum(np.abs(A[pairs]) ** 2) / (N * (N - 1)))


@dataclass(frozen=True, eq=False)
class ExtractedState:
    """Gamma_{N,j}: the j particles in ran P, after tracing out the rest."""

    sector: FockSector
    density: np.ndarray
    trace: float
    identity_error: float


def _split_ranks(sector: FockSector, P: Projector, j: int, on: np.ndarray):
    """Ranks of the P-part and Q-part of each supported occupation vector."""
    Q = P.complement()
    states = sector.states[on]
    sub = FockSector(P.rank, j)
    rP = sub.rank(states[:, P.mask])
    if Q.rank == 0 or sector.particle_count == j:
        return sub, rP, np.zeros(len(states), dtype=np.int64), 1
    rest = FockSector(Q.rank, sector.particle_count - j)
    return sub, rP, rest.rank(states[:, Q.mask]), rest.dim


def extract_sector_state(sector: FockSector, state, P: Projector, tol: float = 1e-10) -> ExtractedState:
    """Build Gamma_{N,j} and check P2 gamma2_N P2 = C(j,2)/C(N,2) * gamma2_{N,j} entrywise."""
    N = sector.particle_count
    (j,) = sector_counts(sector, state, P)
    if j < 2:
        raise SectorSupportError(f"need at least two particles in ran P, got {j}")
    Y = _factor(sector, state)
    Y = Y / math.sqrt(np.sum(np.abs(Y) ** 2))
    on = _support(sector, Y)
    sub, rP, rQ, DQ = _split_ranks(sector, P, j, on)
    C = np.zeros((sub.dim, DQ, Y.shape[1]), dtype=complex)
    C[rP, rQ] = Y[on]
    rho = np.einsum("aqr,bqr->ab", C, C.conj())
    rho = 0.5 * (rho + rho.conj().T)
    tr = float(np.real(np.trace(rho)))
    if abs(tr - 1) > tol:
        raise IdentityViolationError(f"extracted state has trace {tr:.15g}")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise IdentityViolationError("extracted state is not positive")
    g_full = reduced_density(sector, Y[:, 0] if Y.shape[1] == 1 else Y @ Y.conj().T, 2).matrix
    d, p = sector.mode_count, P.rank
    idx = np.array([a * d + b for a in P.modes for b in P.modes])
    lhs = g_full[np.ix_(idx, idx)]
    rhs = math.comb(j, 2) / math.comb(N, 2) * reduced_density(sub, rho, 2).matrix
    err = float(np.max(np.abs(lhs - rhs))) if p else 0.0
    return ExtractedState(sub, rho, tr, err)


# ---------------------------------------------------------------------------
# projected interaction bound


@dataclass(frozen=True)
class ProjectedBound:
    min_eigenvalue: float
    fitted_C: float
    rank1: int
    rank2: int
    K1: float
    K2: float
    particle_number: int
    beta: float

    def record(self) -> dict:
        return dict(self.__dict__)


def projected_interaction_bound(basis: OneBodyBasis, K1: float, K2: float, wN,
                                rank_cap: int = 10_000) -> ProjectedBound:
    """Lowest eigenvalue of P1 x P2 w_N P1 x P2 and C = -lambda / (beta K1 K2 log N)."""
    if not K1 >= K2 > 0:
        raise ValueError("need K1 >= K2 > 0")
    P1, P2 = cutoff_projector(basis, K1), cutoff_projector(basis, K2)
    r1, r2 = P1.rank, P2.rank
    if r1 * r2 > rank_cap:
        raise SectorSizeError(f"product projector rank {r1}*{r2} = {r1 * r2} exceeds the cap {rank_cap}")
    if r1 == 0 or r2 == 0:
        raise ValueError("cutoff leaves an empty projector")
    fourier_at = wN.fourier_at if basis.is_plane_wave else None
    V = two_body_block(basis, wN.fourier, P1.modes, P2.modes, fourier_at=fourier_at)
    M = V.reshape(r1 * r2, r1 * r2)
    M = 0.5 * (M + M.conj().T)
    if M.shape[0] <= 4000:
        lam = float(np.linalg.eigvalsh(M)[0])
    else:
        lam = float(eigsh(M, k=1, which="SA", v0=np.ones(M.shape[0]), return_eigenvectors=False)[0])
    N, beta = wN.particle_number, wN.beta
    C = -lam / (beta * K1 * K2 * math.log(N)) if lam < 0 else 0.0
    return ProjectedBound(lam, C, r1, r2, K1, K2, N, beta)
