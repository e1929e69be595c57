"""Independent reference implementations used to cross-check the main code paths.

Everything here is deliberately brute force: truncated series, exhaustive
enumeration and uniform-cost search.  None of it shares code with the package.
"""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np


def zoh_discretize_series(A: np.ndarray, B: np.ndarray, ts: float, terms: int = 20):
    """Zero-order-hold discretization via truncated matrix-exponential series.

    Ad = sum_k (A ts)^k / k!,   Bd = (sum_k A^k ts^(k+1) / (k+1)!) B
    """
    n = A.shape[0]
    Ad = np.zeros((n, n))
    S = np.zeros((n, n))
    term = np.eye(n)
    for k in range(terms):
        Ad += term / math.factorial(k)
        S += term * ts / math.factorial(k + 1)
        term = term @ (A * ts)
    return Ad, S @ B


def solve_qp_by_enumeration(H, f, A, b, tol=1e-8):
    """Global minimum of  1/2 z'Hz + f'z  s.t.  Az <= b  by active-set enumeration.

    Tries every subset of constraints as a candidate active set, solves the
    equality-constrained problem, and keeps the best feasible candidate with
    nonnegative multipliers.  Returns (z, objective) or (None, None) when the
    problem is infeasible.
    """
    H = np.asarray(H, float)
    f = np.asarray(f, float)
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    n = f.size
    m = b.size

    Hinv_f = np.linalg.solve(H, f)
    HinvAT = np.linalg.solve(H, A.T)          # (n, m)
    S_all = A @ HinvAT                         # (m, m)
    r_all = A @ Hinv_f + b                     # (m,)

    def objective(z):
        return 0.5 * z @ H @ z + f @ z

    best_z = None
    best_obj = np.inf

    z0 = -Hinv_f
    if np.all(A @ z0 <= b + tol):
        best_z, best_obj = z0, objective(z0)

    P = HinvAT.T                               # (m, n) rows are H^-1 a_i
    for k in range(1, min(n, m) + 1):
        combos = np.array(list(itertools.combinations(range(m), k)))
        Ssub = S_all[combos[:, :, None], combos[:, None, :]]
        rhs = -r_all[combos]
        try:
            lam = np.linalg.solve(Ssub, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            lam = np.full((len(combos), k), np.nan)
            for i, c in enumerate(combos):
                try:
                    lam[i] = np.linalg.solve(Ssub[i], rhs[i])
                except np.linalg.LinAlgError:
                    pass
        ok = np.all(lam >= -tol, axis=1) & np.all(np.isfinite(lam), axis=1)
        if not np.any(ok):
            continue
        z = -Hinv_f[None, :] - np.einsum("nk,nkj->nj", lam[ok], P[combos[ok]])
        feasible = np.all(z @ A.T <= b[None, :] + tol, axis=1)
        for zc in z[feasible]:
            obj = objective(zc)
            if obj < best_obj - 1e-12:
                best_z, best_obj = zc, obj
    if best_z is None:
        return None, None
    return best_z, best_obj


def dijkstra_grid(occupancy: np.ndarray, start, goal, cell_size: float):
    """Uniform-cost search over the same 8-connected grid the planner uses.

    Diagonal moves are allowed only when both orthogonal neighbours are free.
    Returns the minimal path cost or None when the goal is unreachable.
    """
    rows, cols = occupancy.shape
    start = tuple(start)
    goal = tuple(goal)
    dist = {start: 0.0}
    heap = [(0.0, start)]
    diag = cell_size * math.sqrt(2.0)
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == goal:
            return d
        if d > dist.get(cell, np.inf):
            continue
        r, c = cell
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1),
                       (-1, -1), (-1, 1), (1, -1), (1, 1)):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or occupancy[nr, nc]:
                continue
            if dr and dc and (occupancy[r + dr, c] or occupancy[r, c + dc]):
                continue
            step = diag if dr and dc else cell_size
            nd = d + step
            if nd < dist.get((nr, nc), np.inf) - 1e-15:
                dist[(nr, nc)] = nd
                heapq.heappush(heap, (nd, (nr, nc)))
    return None


def dijkstra_all_costs(occupancy: np.ndarray, start, cell_size: float):
    """Exact cost-to-come from ``start`` for every reachable cell."""
    rows, cols = occupancy.shape
    dist = np.full(occupancy.shape, np.inf)
    dist[tuple(start)] = 0.0
    heap = [(0.0, tuple(start))]
    diag = cell_size * math.sqrt(2.0)
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1),
                       (-1, -1), (-1, 1), (1, -1), (1, 1)):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or occupancy[nr, nc]:
                continue
            if dr and dc and (occupancy[r + dr, c] or occupancy[r, c + dc]):
                continue
            step = diag if dr and dc else cell_size
            if d + step < dist[nr, nc] - 1e-15:
                dist[nr, nc] = d + step
                heapq.heappush(heap, (d + step, (nr, nc)))
    return dist
