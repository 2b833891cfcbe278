"""Occupation-number basis of the N-boson sector over d modes.

The compiled kernels in ``_fock_ext`` are used when importable; setting
BEC_LAB_PURE=1 forces the numpy reference kernels.
"""
from __future__ import annotations

import math
import os
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import _fock_py

try:
    if os.environ.get("BEC_LAB_PURE") == "1":
        raise ImportError("pure kernels requested")
    from . import _fock_ext as _kernels
    BACKEND = "compiled"
except ImportError:
    _kernels = _fock_py
    BACKEND = "python"

SECTOR_CAP = 200_000


class SectorSizeError(ValueError):
    pass


def sector_dimension(N: int, d: int) -> int:
    return math.comb(N + d - 1, N)


class FockSector:
    """Symmetric N-particle space over d modes in occupation-number form."""

    def __init__(self, mode_count: int, particle_count: int, cap: int = SECTOR_CAP, kernels=None):
        if mode_count < 1:
            raise ValueError("need at least one mode")
        if particle_count < 0:
            raise ValueError("particle count must be nonnegative")
        dim = sector_dimension(particle_count, mode_count)
        if dim > cap:
            raise SectorSizeError(f"sector dimension C(N+d-1, N) = C({particle_count + mode_count - 1}, "
                                  f"{particle_count}) = {dim} exceeds the cap {cap}")
        self.mode_count = mode_count
        self.particle_count = particle_count
        self.cap = cap
        self._k = _kernels if kernels is None else kernels
        self._binom = self._k.binomial_table(particle_count + mode_count)
        self.states = self._k.enumerate_states(particle_count, mode_count)

    def __len__(self) -> int:
        return len(self.states)

    def __repr__(self) -> str:
        return f"FockSector(d={self.mode_count}, N={self.particle_count}, dim={len(self)})"

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict:
        return {tuple(int(x) for x in s): i for i, s in enumerate(self.states)}

    def rank(self, occupations) -> np.ndarray:
        occ = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        if occ.shape[1] != self.mode_count or np.any(occ < 0) or np.any(occ.sum(axis=1) != self.particle_count):
            raise ValueError("occupations do not belong to this sector")
        return self._k.rank_states(occ, self.particle_count, self._binom)

    def basis_state(self, occupations) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[int(self.rank(occupations)[0])] = 1.0
        return v

    def annihilator(self, order: int) -> sp.csr_matrix:
        """Stacked a_k (order 1) or a_l a_k (order 2) as one sparse matrix.

        Row ``channel * D' + target`` with D' the dimension of the N - order
        sector; channel k for order 1 and k*d + l for order 2.
        """
        cache = self.__dict__.setdefault("_annihilators", {})
        if order not in cache:
            N, d = self.particle_count, self.mode_count
            if order > N:
                raise ValueError(f"cannot remove {order} particles from an {N}-particle sector")
            chan, tgt, src, amp = self._k.annihilation_triplets(self.states, N, order, self._binom)
            Dr = sector_dimension(N - order, d)
            rows = chan * Dr + tgt
            cache[order] = sp.csr_matrix((amp.astype(complex), (rows, src)),
                                         shape=(d**order * Dr, self.dim))
        return cache[order]

    def number_operator(self, mode: int) -> sp.dia_matrix:
        return sp.diags(self.states[:, mode].astype(float))

    def coherent_state(self, coeffs) -> np.ndarray:
        """Occupation amplitudes of the normalized product state u^{tensor N}, u = sum c_i phi_i."""
        c = np.asarray(coeffs, dtype=complex)
        norm = np.linalg.norm(c)
        if norm == 0:
            raise ValueError("zero one-body vector")
        c = c / norm
        n = self.states
        logmult = math.lgamma(self.particle_count + 1) - np.sum([[math.lgamma(x + 1) for x in row] for row in n],
                                                                axis=1)
        with np.errstate(divide="ignore"):
            amp = np.exp(0.5 * logmult) * np.prod(np.where(n > 0, c[None, :] ** n, 1.0), axis=1)
        return amp


def reduce_pair(sector: FockSector, psi: np.ndarray, order: int) -> np.ndarray:
    """Amplitudes <m| a_(channel) |psi> as a (d^order, D') array; psi may have trailing columns."""
    A = sector.annihilator(order) @ psi
    Dr = sector_dimension(sector.particle_count - order, sector.mode_count)
    return A.reshape((sector.mode_count**order, Dr) + np.shape(psi)[1:])
