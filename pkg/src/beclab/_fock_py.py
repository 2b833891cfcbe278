"""Pure-numpy Fock kernels; reference implementation for the compiled module.

States are ordered reverse-lexicographically, so |N,0,...,0> has index 0 and
|0,...,0,N> is last.
"""
import numpy as np


def binomial_table(top: int) -> np.ndarray:
    """Pascal triangle C[a, b] for 0 <= a, b <= top, as int64."""
    C = np.zeros((top + 1, top + 1), dtype=np.int64)
    C[:, 0] = 1
    for a in range(1, top + 1):
        C[a, 1:a + 1] = C[a - 1, 0:a] + C[a - 1, 1:a + 1]
    return C


def enumerate_states(N: int, d: int) -> np.ndarray:
    C = binomial_table(N + d)
    D = int(C[N + d - 1, N])
    out = np.zeros((D, d), dtype=np.int64)
    cur = np.zeros(d, dtype=np.int64)
    cur[0] = N
    out[0] = cur
    for s in range(1, D):
        # last position before the final slot holding a particle
        i = d - 2
        while cur[i] == 0:
            i -= 1
        tail = cur[i + 1:].sum()
        cur[i] -= 1
        cur[i + 1:] = 0
        cur[i + 1] = tail + 1
        out[s] = cur
    return out


def rank_states(states: np.ndarray, N: int, binom: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    d = states.shape[1]
    before = np.cumsum(states, axis=1) - states
    remaining = N - before
    free = remaining - states
    p = d - 1 - np.arange(d)
    top = np.where(free >= 1, free - 1 + p, 0)
    terms = np.where(free >= 1, binom[top, p], 0)
    return terms.sum(axis=1)


def annihilation_triplets(states: np.ndarray, N: int, order: int, binom: np.ndarray):
    """Nonzero amplitudes of a_k (order 1) or a_l a_k (order 2) on each state.

    Returns (channel, target, source, amplitude) where channel is k or k*d + l
    and target is the rank of the reduced occupation in the N - order sector.
    """
    D, d = states.shape
    src = np.arange(D)
    if order == 1:
        chans, tgt_states, amps, srcs = [], [], [], []
        for k in range(d):
            keep = states[:, k] > 0
            reduced = states[keep].copy()
            amps.append(np.sqrt(reduced[:, k].astype(float)))
            reduced[:, k] -= 1
            tgt_states.append(reduced)
            srcs.append(src[keep])
            chans.append(np.full(keep.sum(), k))
    elif order == 2:
        chans, tgt_states, amps, srcs = [], [], [], []
        for k in range(d):
            for l in range(d):
                reduced = states.copy()
                a1 = reduced[:, k].astype(float)
                reduced[:, k] -= 1
                a2 = reduced[:, l].astype(float)
                reduced[:, l] -= 1
                keep = (a1 > 0) & (a2 > 0)
                amps.append(np.sqrt(a1[keep] * a2[keep]))
                tgt_states.append(reduced[keep])
                srcs.append(src[keep])
                chans.append(np.full(keep.sum(), k * d + l))
    else:
        raise ValueError("order must be 1 or 2")
    reduced = np.concatenate(tgt_states) if tgt_states else np.zeros((0, d), dtype=np.int64)
    target = rank_states(reduced, N - order, binom) if len(reduced) else np.zeros(0, dtype=np.int64)
    return (np.concatenate(chans).astype(np.int64), target.astype(np.int64),
            np.concatenate(srcs).astype(np.int64), np.concatenate(amps))
