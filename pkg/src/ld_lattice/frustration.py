"""The reduced phase problem: minimize the mean cosine of neighboring phase
differences subject to the period boundary condition.

For a cell of N planes shifted by s per period, the reduced objective is
F(delta) = (1/N) sum_n cos(delta_n - delta_{n+1}) with delta_1 = 0 and
delta_{N+1} = -H p s (mod 2pi).  Its minimum F(N, s) = -1 exactly on the
commensurate set (N even with s an even multiple of the half period q1, or N
odd with an odd multiple); anywhere else the boundary condition frustrates
the pairwise-optimal difference pi and F(N, s) > -1.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .asymptotics import PhaseVector, wrap_angle
from .core import BIPERIODIC, FINITE_LAYER, DimensionTooLargeError, ModelParams


def max_workers() -> int:
    env = os.environ.get("LD_LATTICE_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Map preserving input order; worker count capped by LD_LATTICE_THREADS."""
    workers = max_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class ReducedProblem:
    N: int
    Hps: float
    kind: str = BIPERIODIC

    def boundary(self):
        return 0.0, wrap_angle(-self.Hps)

    def n_terms(self) -> int:
        return self.N if self.kind == BIPERIODIC else self.N - 1


@dataclass
class ReducedMinimum:
    F: float
    delta: PhaseVector
    multiple_minimizers: bool
    min_eigenvalue: Optional[float] = None


def evaluate_F(delta: PhaseVector) -> float:
    """Mean cosine of neighboring phase differences (the reduced objective)."""
    diffs = delta.differences()
    return float(np.mean(np.cos(diffs)))


def _objective_and_grad(interior, Hps, N):
    d = np.concatenate([[0.0], interior, [-Hps]])
    diffs = d[:-1] - d[1:]
    F = np.mean(np.cos(diffs))
    # dF/d delta_j for interior j: pairs (j-1, j) and (j, j+1)
    g = (np.sin(diffs[:-1]) - np.sin(diffs[1:])) / N
    return F, g


def _hessian(interior, Hps, N):
    d = np.concatenate([[0.0], interior, [-Hps]])
    C = np.cos(d[:-1] - d[1:])
    n = interior.size
    M = np.zeros((n, n))
    for i in range(n):
        M[i, i] = -(C[i] + C[i + 1])
        if i + 1 < n:
            M[i, i + 1] = M[i + 1, i] = C[i + 1]
    return M / N


def _canonical(interior, Hps):
    d = np.concatenate([[0.0], interior, [-Hps]])
    return tuple(np.round(wrap_angle(d[:-1] - d[1:]), 9))


def minimize_F(N: int, s: float, params: ModelParams, n_starts: int = 32,
               seed: int = 0) -> ReducedMinimum:
    """Global minimum of the reduced objective by multi-start descent.

    Random interior starts are polished by gradient descent and damped Newton
    steps on the tridiagonal Hessian; equivalent minimizers (identical
    difference vectors modulo 2pi) are merged, and the multiplicity flag is
    raised when inequivalent minimizers tie within 1e-6.  Certified against
    the brute-force scan for N <= 4 in the tests.
    """
    Hps = params.H * params.p * s
    if N == 1:
        pv = PhaseVector.biperiodic(np.empty(0), Hps)
        return ReducedMinimum(evaluate_F(pv), pv, False, None)

    rng = np.random.default_rng(seed)
    starts = [rng.uniform(0.0, 2.0 * np.pi, size=N - 1) for _ in range(n_starts)]

    def polish(interior):
        x = np.array(interior, dtype=float)
        F, g = _objective_and_grad(x, Hps, N)
        for _ in range(500):
            if np.max(np.abs(g)) < 1e-13:
                break
            H = _hessian(x, Hps, N)
            try:
                step = np.linalg.solve(H + 1e-14 * np.eye(x.size), -g)
            except np.linalg.LinAlgError:
                step = -g
            if not np.all(np.isfinite(step)) or np.dot(step, g) > 0:
                step = -g
            t = 1.0
            for _ in range(60):
                Fn, gn = _objective_and_grad(x + t * step, Hps, N)
                if Fn < F - 1e-16:
                    x, F, g = x + t * step, Fn, gn
                    break
                t *= 0.5
            else:
                # no decrease along either direction: at a critical point
                break
        return F, x

    results = parallel_map(polish, starts)
    Fbest = min(F for F, _ in results)
    classes = {}
    for F, x in results:
        if F <= Fbest + 1e-6:
            classes.setdefault(_canonical(x, Hps), (F, x))
    # deterministic representative: lexicographically smallest difference vector
    key = min(classes)
    Fstar, xstar = classes[key]
    multiple = len(classes) > 1
    eigs = np.linalg.eigvalsh(_hessian(xstar, Hps, N))
    pv = PhaseVector.biperiodic(xstar, Hps)
    return ReducedMinimum(float(Fstar), pv, multiple, float(eigs.min()))


def brute_force_F(N: int, s: float, params: ModelParams, grid_points: int = 4096) -> float:
    """Exhaustive scan oracle over a uniform interior grid (N <= 4 only)."""
    if N > 4:
        raise DimensionTooLargeError("brute force limited to N <= 4")
    Hps = params.H * params.p * s
    if N == 1:
        return float(np.cos(0.0 - (-Hps)))
    grid = 2.0 * np.pi * np.arange(grid_points) / grid_points
    if N == 2:
        F = np.cos(-grid) + np.cos(grid + Hps)
        return float(F.min() / N)
    if N == 3:
        d2 = grid[:, None]
        d3 = grid[None, :]
        F = np.cos(-d2) + np.cos(d2 - d3) + np.cos(d3 + Hps)
        return float(F.min() / N)
    best = np.inf
    for a in grid:
        d3 = grid[:, None]
        d4 = grid[None, :]
        F = np.cos(-a) + np.cos(a - d3) + np.cos(d3 - d4) + np.cos(d4 + Hps)
        best = min(best, float(F.min()))
    return best / N


def reduced_hessian(delta: PhaseVector, params: Optional[ModelParams] = None):
    """Tridiagonal Hessian of the (unnormalized) reduced objective.

    Entries: M[n, n] = -(C_{n-1} + C_n), M[n, n+1] = C_n with
    C_n = cos(delta_n - delta_{n+1}).  Returns (matrix, min_eig, max_eig).
    """
    if delta.N < 2:
        raise ValueError("reduced Hessian needs at least one interior phase")
    diffs = delta.differences()
    C = np.cos(diffs)
    n = delta.N - 1
    M = np.zeros((n, n))
    for i in range(n):
        M[i, i] = -(C[i] + C[i + 1])
        if i + 1 < n:
            M[i, i + 1] = M[i + 1, i] = C[i + 1]
    eigs = np.linalg.eigvalsh(M)
    return M, float(eigs.min()), float(eigs.max())


def classify_optimality(N: int, s: float, params: ModelParams, tol: float = 1e-9) -> str:
    """Commensurability class: 'optimal_even', 'optimal_odd', or 'frustrated'."""
    q1 = np.pi / (params.H * params.p)
    ratio = s / q1
    nearest = round(ratio)
    commensurate = abs(ratio - nearest) <= tol * max(1.0, abs(ratio))
    if commensurate and N % 2 == 0 and nearest % 2 == 0:
        return "optimal_even"
    if commensurate and N % 2 == 1 and nearest % 2 == 1:
        return "optimal_odd"
    return "frustrated"


def finite_layer_minimum(N: int) -> ReducedMinimum:
    """Reduced problem of a finite stack: only delta_1 = 0 is constrained.

    The alternating choice delta_{n+1} - delta_n = pi is always admissible, so
    the normalized minimum is exactly -1 for every N >= 2.
    """
    if N < 2:
        raise ValueError("finite-layer reduced problem needs N >= 2")
    pv = PhaseVector.staggered(N, FINITE_LAYER)
    return ReducedMinimum(evaluate_F(pv), pv, False, None)


def scan(N_values, s_values, params: ModelParams, n_starts: int = 32, seed: int = 0):
    """Phase-diagram scan; rows of (N, s, F*, class, min_eigenvalue)."""
    rows = []
    for N in N_values:
        for s in s_values:
            res = minimize_F(int(N), float(s), params, n_starts=n_starts, seed=seed)
            rows.append({
                "N": int(N),
                "s": float(s),
                "F": res.F,
                "class": classify_optimality(int(N), float(s), params),
                "min_eigenvalue": res.min_eigenvalue if res.min_eigenvalue is not None else np.nan,
                "multiple_minimizers": res.multiple_minimizers,
            })
    return rows
