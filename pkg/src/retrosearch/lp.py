"""Two-phase primal simplex on a dense tableau (Bland's rule)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

TOL = 1e-7


class SimplexStalledError(RuntimeError):
    """Pivot limit hit; Bland's rule cannot cycle, so this signals a bug."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float
    x: np.ndarray
    pivots: int = 0


def _run(T, basis, n_allowed, phase):
    rows, cols = T.shape
    limit = 10 * (rows + cols)
    status, it = kernels.simplex_pivots(T, basis, n_allowed, TOL, limit)
    if status == kernels.STATUS_STALLED:
        raise SimplexStalledError(f"phase {phase} exceeded {limit} pivots on a {rows}x{cols} tableau")
    return status, it


def solve_lp(c, A, b) -> LpResult:
    """Minimise ``c @ x`` subject to ``A @ x >= b`` and ``x >= 0``."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    n = c.size
    if A.size == 0:
        A = np.zeros((0, n))
    m = A.shape[0]
    if m == 0:
        if np.any(c < -TOL):
            return LpResult("unbounded", -np.inf, np.zeros(n))
        return LpResult("optimal", 0.0, np.zeros(n))

    need_art = b > 0.0
    art_rows = np.flatnonzero(need_art)
    k = art_rows.size
    ncol = n + m + k
    T = np.zeros((m + 1, ncol + 1))
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        if need_art[i]:
            T[i, :n] = A[i]
            T[i, n + i] = -1.0
            T[i, -1] = b[i]
        else:
            # a x >= b with b <= 0  <=>  -a x + s = -b >= 0
            T[i, :n] = -A[i]
            T[i, n + i] = 1.0
            T[i, -1] = -b[i]
            basis[i] = n + i
    for j, i in enumerate(art_rows):
        T[i, n + m + j] = 1.0
        basis[i] = n + m + j

    pivots = 0
    if k:
        T[m, : n + m] = -T[art_rows, : n + m].sum(axis=0)
        T[m, -1] = -T[art_rows, -1].sum()
        _, it = _run(T, basis, ncol, 1)
        pivots += it
        if -T[m, -1] > TOL * max(1.0, float(np.abs(b).max())):
            return LpResult("infeasible", np.inf, np.full(n, np.nan), pivots)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n + m:
                cand = np.flatnonzero(np.abs(T[i, : n + m]) > TOL)
                if cand.size == 0:
                    continue
                j = int(cand[0])
                T[i] /= T[i, j]
                f = T[:, j].copy()
                f[i] = 0.0
                T -= np.outer(f, T[i])
                basis[i] = j
                pivots += 1
            keep.append(i)
        T = np.vstack([T[keep], T[m : m + 1]])
        T = np.ascontiguousarray(np.delete(T, np.s_[n + m : n + m + k], axis=1))
        basis = np.ascontiguousarray(basis[keep])
        m = len(keep)

    T[m, :] = 0.0
    T[m, :n] = c
    for i in range(m):
        cb = c[basis[i]] if basis[i] < n else 0.0
        if cb != 0.0:
            T[m] -= cb * T[i]
    status, it = _run(T, basis, T.shape[1] - 1, 2)
    pivots += it
    if status == kernels.STATUS_UNBOUNDED:
        return LpResult("unbounded", -np.inf, np.full(n, np.nan), pivots)
    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, -1]
    x[np.abs(x) < 1e-12] = 0.0
    return LpResult("optimal", float(c @ x), x, pivots)
