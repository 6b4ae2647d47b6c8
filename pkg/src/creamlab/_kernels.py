"""Hot inner loops: row-wise ranking, rank correlations, pairwise disagreement.

Every kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. The public names bound at the bottom of this module pick one of the
two at import time. Set ``CREAMLAB_DISABLE_NUMBA=1`` to force the numpy path
(useful for debugging, or where numba is unavailable).

Both paths compute the same closed forms and must agree exactly on integer
inputs; ``tests/test_kernels.py`` checks that.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CREAMLAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def rank_rows_numpy(rewards):
    """Rank each row descending; ties go to the lower candidate index.

    rank[i] = 1 + #{k : r_k > r_i} + #{k < i : r_k == r_i}
    """
    r = np.asarray(rewards, dtype=np.float64)
    gt = r[:, None, :] > r[:, :, None]          # [p, i, k] : r_k > r_i
    eq = r[:, None, :] == r[:, :, None]
    n = r.shape[1]
    lower = np.tril(np.ones((n, n), dtype=bool), k=-1)  # k < i
    return 1 + gt.sum(axis=2) + (eq & lower).sum(axis=2)


def _pair_signs_numpy(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    return np.sign((a[:, iu] - a[:, ju]) * (b[:, iu] - b[:, ju])), n


def kendall_rows_numpy(j_ranks, k_ranks):
    s, n = _pair_signs_numpy(j_ranks, k_ranks)
    return 2.0 * s.sum(axis=1) / (n * (n - 1))


def spearman_rows_numpy(j_ranks, k_ranks):
    a = np.asarray(j_ranks, dtype=np.int64)
    b = np.asarray(k_ranks, dtype=np.int64)
    n = a.shape[1]
    d2 = ((a - b) ** 2).sum(axis=1)
    return 1.0 - (6 * d2) / (n * (n * n - 1))


def toporder_rows_numpy(j_ranks, k_ranks):
    a = np.asarray(j_ranks)
    b = np.asarray(k_ranks)
    top = np.argmin(a, axis=1) == np.argmin(b, axis=1)
    bottom = np.argmax(a, axis=1) == np.argmax(b, axis=1)
    return (top & bottom).astype(np.int64)


def disagreement_mass_numpy(probs, r_cur, r_prev):
    """sum_{y,y'} p(y) p(y') 1[r_cur(y) >= r_cur(y')] 1[r_prev(y) < r_prev(y')]"""
    p = np.asarray(probs, dtype=np.float64)
    c = np.asarray(r_cur, dtype=np.float64)
    q = np.asarray(r_prev, dtype=np.float64)
    ind = (c[:, None] >= c[None, :]) & (q[:, None] < q[None, :])
    return float(np.sum(np.outer(p, p) * ind))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def rank_rows_numba(rewards):
        n_rows, n = rewards.shape
        out = np.empty((n_rows, n), dtype=np.int64)
        for p in range(n_rows):
            for i in range(n):
                ri = rewards[p, i]
                r = 1
                for k in range(n):
                    rk = rewards[p, k]
                    if rk > ri or (rk == ri and k < i):
                        r += 1
                out[p, i] = r
        return out

    @njit(cache=True)
    def kendall_rows_numba(j_ranks, k_ranks):
        n_rows, n = j_ranks.shape
        out = np.empty(n_rows, dtype=np.float64)
        denom = n * (n - 1)
        for p in range(n_rows):
            s = 0
            for i in range(n):
                for k in range(i + 1, n):
                    prod = (j_ranks[p, i] - j_ranks[p, k]) * (k_ranks[p, i] - k_ranks[p, k])
                    if prod > 0:
                        s += 1
                    elif prod < 0:
                        s -= 1
            out[p] = 2.0 * s / denom
        return out

    @njit(cache=True)
    def spearman_rows_numba(j_ranks, k_ranks):
        n_rows, n = j_ranks.shape
        out = np.empty(n_rows, dtype=np.float64)
        denom = n * (n * n - 1)
        for p in range(n_rows):
            d2 = 0
            for i in range(n):
                d = j_ranks[p, i] - k_ranks[p, i]
                d2 += d * d
            out[p] = 1.0 - (6 * d2) / denom
        return out

    @njit(cache=True)
    def toporder_rows_numba(j_ranks, k_ranks):
        n_rows, n = j_ranks.shape
        out = np.empty(n_rows, dtype=np.int64)
        for p in range(n_rows):
            out[p] = int(
                np.argmin(j_ranks[p]) == np.argmin(k_ranks[p])
                and np.argmax(j_ranks[p]) == np.argmax(k_ranks[p])
            )
        return out

    @njit(cache=True)
    def disagreement_mass_numba(probs, r_cur, r_prev):
        v = probs.shape[0]
        total = 0.0
        for y in range(v):
            for yp in range(v):
                if r_cur[y] >= r_cur[yp] and r_prev[y] < r_prev[yp]:
                    total += probs[y] * probs[yp]
        return total


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as2d(x, dtype):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=dtype)))


if USE_NUMBA:

    def rank_rows(rewards):
        return rank_rows_numba(_as2d(rewards, np.float64))

    def kendall_rows(j_ranks, k_ranks):
        return kendall_rows_numba(_as2d(j_ranks, np.int64), _as2d(k_ranks, np.int64))

    def spearman_rows(j_ranks, k_ranks):
        return spearman_rows_numba(_as2d(j_ranks, np.int64), _as2d(k_ranks, np.int64))

    def toporder_rows(j_ranks, k_ranks):
        return toporder_rows_numba(_as2d(j_ranks, np.int64), _as2d(k_ranks, np.int64))

    def disagreement_mass(probs, r_cur, r_prev):
        return float(disagreement_mass_numba(
            np.ascontiguousarray(probs, dtype=np.float64),
            np.ascontiguousarray(r_cur, dtype=np.float64),
            np.ascontiguousarray(r_prev, dtype=np.float64),
        ))

else:

    def rank_rows(rewards):
        return rank_rows_numpy(np.atleast_2d(rewards))

    def kendall_rows(j_ranks, k_ranks):
        return kendall_rows_numpy(np.atleast_2d(j_ranks), np.atleast_2d(k_ranks))

    def spearman_rows(j_ranks, k_ranks):
        return spearman_rows_numpy(np.atleast_2d(j_ranks), np.atleast_2d(k_ranks))

    def toporder_rows(j_ranks, k_ranks):
        return toporder_rows_numpy(np.atleast_2d(j_ranks), np.atleast_2d(k_ranks))

    disagreement_mass = disagreement_mass_numpy


BACKEND = "numba" if USE_NUMBA else "numpy"
