"""Hot numeric kernels.

Every kernel has two implementations: a loop-based one compiled with
``numba.njit`` and a vectorised pure-numpy one.  The numba path is used
when numba imports and ``RETROSEARCH_DISABLE_NUMBA`` is unset (or "0").
Both paths consume the same random streams and follow the same pivot
rules, so they agree to floating point round-off.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_ENV = "RETROSEARCH_DISABLE_NUMBA"


def _numba_requested() -> bool:
    flag = os.environ.get(DISABLE_ENV, "").strip().lower()
    if flag not in ("", "0", "false", "no", "off"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _numba_requested()

if USE_NUMBA:
    from numba import njit
else:  # pragma: no cover - exercised via subprocess in the tests

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


# splitmix64 constants
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
TWO_NEG53 = 1.0 / 9007199254740992.0

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_STALLED = 2


# ---------------------------------------------------------------------------
# splitmix64 counter streams
# ---------------------------------------------------------------------------


def mix64_np(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= MIX1
    z ^= z >> np.uint64(27)
    z *= MIX2
    z ^= z >> np.uint64(31)
    return z


@njit(cache=True)
def _mix64_nb(x):
    z = x
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return z


def trial_keys(seed: int, trials: int) -> np.ndarray:
    """Per-trial stream keys derived from a root seed."""
    idx = np.arange(trials, dtype=np.uint64)
    return mix64_np(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ mix64_np(idx * GOLDEN + GOLDEN))


# ---------------------------------------------------------------------------
# asymmetric +-1 walk hitting times
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hitting_times_nb(keys, p_up, target, cap):
    trials = keys.shape[0]
    out = np.empty(trials, dtype=np.int64)
    capped = 0
    golden = np.uint64(0x9E3779B97F4A7C15)
    for t in range(trials):
        state = keys[t]
        pos = 0
        n = 0
        while pos < target and n < cap:
            state = state + golden
            u = np.float64(_mix64_nb(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            if u < p_up:
                pos += 1
            else:
                pos -= 1
            n += 1
        if pos < target:
            capped += 1
        out[t] = n
    return out, capped


def _hitting_times_np(keys, p_up, target, cap):
    trials = keys.shape[0]
    out = np.zeros(trials, dtype=np.int64)
    state = keys.copy()
    pos = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    n = 0
    while active.size and n < cap:
        state[active] += GOLDEN
        u = (mix64_np(state[active]) >> np.uint64(11)).astype(np.float64) * TWO_NEG53
        pos[active] += np.where(u < p_up, 1, -1)
        n += 1
        out[active] = n
        active = active[pos[active] < target]
    return out, int(active.size)


def hitting_times(keys: np.ndarray, p_up: float, target: int, cap: int):
    """First time a walk starting at 0 with +1 steps w.p. ``p_up`` reaches ``target``.

    Returns ``(times, capped)``; trials that hit ``cap`` steps report ``cap``.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if target <= 0:
        return np.zeros(keys.shape[0], dtype=np.int64), 0
    if USE_NUMBA:
        times, capped = _hitting_times_nb(keys, float(p_up), int(target), int(cap))
        return times, int(capped)
    return _hitting_times_np(keys, float(p_up), int(target), int(cap))


# ---------------------------------------------------------------------------
# simplex pivoting (Bland's rule) on a dense tableau
# ---------------------------------------------------------------------------
#
# Tableau layout: rows 0..m-1 are constraints, row m holds reduced costs,
# the last column is the right-hand side.  T[m, -1] holds -objective.


@njit(cache=True)
def _simplex_pivots_nb(T, basis, n_allowed, tol, max_iter):
    m = T.shape[0] - 1
    ncol = T.shape[1]
    rhs = ncol - 1
    it = 0
    while True:
        enter = -1
        for j in range(n_allowed):
            if T[m, j] < -tol:
                enter = j
                break
        if enter < 0:
            return STATUS_OPTIMAL, it
        if it >= max_iter:
            return STATUS_STALLED, it
        leave = -1
        best = 0.0
        for i in range(m):
            a = T[i, enter]
            if a > tol:
                r = T[i, rhs] / a
                if leave < 0 or r < best - tol or (r <= best + tol and basis[i] < basis[leave]):
                    if leave < 0 or r < best - tol:
                        best = r
                    leave = i
        if leave < 0:
            return STATUS_UNBOUNDED, it
        piv = T[leave, enter]
        for j in range(ncol):
            T[leave, j] /= piv
        for i in range(m + 1):
            if i != leave:
                f = T[i, enter]
                if f != 0.0:
                    for j in range(ncol):
                        T[i, j] -= f * T[leave, j]
        basis[leave] = enter
        it += 1


def _simplex_pivots_np(T, basis, n_allowed, tol, max_iter):
    m = T.shape[0] - 1
    it = 0
    while True:
        neg = np.flatnonzero(T[m, :n_allowed] < -tol)
        if neg.size == 0:
            return STATUS_OPTIMAL, it
        if it >= max_iter:
            return STATUS_STALLED, it
        enter = int(neg[0])
        col = T[:m, enter]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            return STATUS_UNBOUNDED, it
        ratios = T[rows, -1] / col[rows]
        # same sequential tie handling as the compiled loop
        leave = -1
        best = 0.0
        for i, r in zip(rows.tolist(), ratios.tolist()):
            if leave < 0 or r < best - tol or (r <= best + tol and basis[i] < basis[leave]):
                if leave < 0 or r < best - tol:
                    best = r
                leave = i
        T[leave] /= T[leave, enter]
        f = T[:, enter].copy()
        f[leave] = 0.0
        T -= np.outer(f, T[leave])
        basis[leave] = enter
        it += 1


def simplex_pivots(T: np.ndarray, basis: np.ndarray, n_allowed: int, tol: float, max_iter: int):
    """Pivot ``T`` in place until optimal, unbounded or ``max_iter`` pivots.

    Entering column: lowest index with negative reduced cost among the first
    ``n_allowed`` columns.  Leaving row: minimum ratio, ties to the lowest
    basic variable index.  Returns ``(status, pivots)``.
    """
    if USE_NUMBA:
        status, it = _simplex_pivots_nb(T, basis, int(n_allowed), float(tol), int(max_iter))
        return int(status), int(it)
    return _simplex_pivots_np(T, basis, int(n_allowed), float(tol), int(max_iter))
