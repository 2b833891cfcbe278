"""Independent reference computations used to freeze expected values in tests.

Nothing here imports the package under test.
"""
import itertools
import math

import numpy as np
from scipy.integrate import solve_ivp


def _townes_rhs(r, y):
    q, dq = y
    return [dq, -dq / r + q - q**3]


def _shoot(q0, r_max=12.0):
    # Q(r) ~ q0 + (q0 - q0^3) r^2 / 4 near the origin
    r0 = 1e-6
    y0 = [q0 + (q0 - q0**3) * r0**2 / 4, (q0 - q0**3) * r0 / 2]

    def crossed(r, y):
        return y[0]
    crossed.terminal = True

    def turned(r, y):
        return y[1]
    turned.terminal = True

    sol = solve_ivp(_townes_rhs, (r0, r_max), y0, events=(crossed, turned),
                    rtol=1e-12, atol=1e-14, dense_output=True)
    if sol.t_events[0].size:
        return +1, sol
    if sol.t_events[1].size and sol.t_events[1][0] > 0.1:
        return -1, sol
    return 0, sol


def townes_mass(tol=1e-13):
    """a* = 2 pi int Q^2 r dr for the positive radial solution of Q'' + Q'/r - Q + Q^3 = 0."""
    lo, hi = 2.0, 2.4
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        sign, _ = _shoot(mid)
        if sign > 0:
            hi = mid
        else:
            lo = mid
    q0 = 0.5 * (lo + hi)
    # integrate mass up to the point where the shot starts to diverge
    _, sol = _shoot(lo)
    r_end = sol.t[-1]
    r = np.linspace(1e-6, r_end, 200001)
    q = sol.sol(r)[0]
    # exponential tail beyond r_end is negligible (Q ~ e^{-r}/sqrt(r))
    mass = 2 * np.pi * np.trapezoid(q**2 * r, r)
    return q0, mass, r_end


def symmetric_tensor(occupations, coeffs, d):
    """First-quantized symmetric tensor of shape (d,)*N from Fock coefficients."""
    N = int(sum(occupations[0]))
    psi = np.zeros((d,) * N, dtype=complex)
    lookup = {tuple(int(x) for x in occ): c for occ, c in zip(occupations, coeffs)}
    for idx in itertools.product(range(d), repeat=N):
        occ = tuple(np.bincount(idx, minlength=d))
        c = lookup.get(occ, 0.0)
        if c != 0.0:
            norm = math.factorial(N)
            for n in occ:
                norm //= math.factorial(n)
            psi[idx] = c / math.sqrt(norm)
    return psi


def dense_partial_trace(psi, k):
    """k-body reduced density matrix of a normalized tensor, as d^k x d^k."""
    d = psi.shape[0]
    N = psi.ndim
    flat = psi.reshape(d**k, d ** (N - k))
    return flat @ flat.conj().T


def lower_symbol_marginal_d2(fock_states, psi, M, k, n_t=None, n_phase=None):
    """Exact Husimi marginal for d=2 by Gauss-Legendre x uniform-phase quadrature.

    z = (sqrt(t) e^{i a}, sqrt(1-t)); the global phase drops out.  The
    integrand is a polynomial of degree <= M+k in t and a trigonometric
    polynomial of degree <= M+k in a, so the rule is exact.
    """
    n_t = n_t or (M + k + 4)
    n_phase = n_phase or (2 * (M + k) + 4)
    nodes, weights = np.polynomial.legendre.leggauss(n_t)
    ts = 0.5 * (nodes + 1)
    wts = 0.5 * weights
    phases = 2 * np.pi * np.arange(n_phase) / n_phase
    out = np.zeros((2**k, 2**k), dtype=complex)
    total = 0.0
    for t, wt in zip(ts, wts):
        for a in phases:
            z = np.array([math.sqrt(t) * np.exp(1j * a), math.sqrt(1 - t)])
            amp = 0.0
            for occ, c in zip(fock_states, psi):
                coef = math.sqrt(math.factorial(M) / (math.factorial(occ[0]) * math.factorial(occ[1])))
                amp += np.conj(coef * z[0] ** occ[0] * z[1] ** occ[1]) * c
            sym = abs(amp) ** 2 * wt / n_phase
            zk = z
            for _ in range(k - 1):
                zk = np.kron(zk, z)
            out += sym * np.outer(zk, zk.conj())
            total += sym
    return out / total


if __name__ == "__main__":
    q0, mass, r_end = townes_mass()
    print(f"Q(0) = {q0:.12f}  a* = {mass:.10f}  (r_end = {r_end:.2f})")
