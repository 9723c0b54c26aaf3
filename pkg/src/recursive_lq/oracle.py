"""Exact discrete-time dynamic programming referees for small problems."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import RestrictionViolated
from .model import ProblemSpec
from .riccati import _pinv, sym


@dataclass(frozen=True, eq=False)
class DiscreteLQSolution:
    """Value ``x'K_i x + 2 k_i'x + c_i`` from node i on, and optimal steps ``u = gains_i x + offsets_i``."""

    K: np.ndarray  # (N+1, n, n)
    k: np.ndarray  # (N+1, n)
    c: np.ndarray  # (N+1,)
    gains: np.ndarray  # (N, m, n)
    offsets: np.ndarray  # (N, m)
    cost: float | None = None  # value at the requested initial state, if any

    @property
    def P0(self) -> np.ndarray:
        return self.K[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(x @ self.K[0] @ x + 2.0 * self.k[0] @ x + self.c[0])


def _nonzero(a: np.ndarray) -> bool:
    return bool(np.any(a != 0.0))


def _recursion(problem: ProblemSpec, noisy: bool) -> DiscreteLQSolution:
    grid = problem.grid
    N, n, m, h = grid.n_steps, problem.n, problem.m, grid.h
    w = np.exp(np.concatenate([[0.0], np.cumsum(problem.E.reshape(-1) * h)]))
    K = np.empty((N + 1, n, n))
    k = np.empty((N + 1, n))
    c = np.empty(N + 1)
    gains = np.empty((N, m, n))
    offsets = np.empty((N, m))
    K[N] = w[N] * problem.G
    k[N] = w[N] * problem.g
    c[N] = 0.0
    I = np.eye(n)
    for i in range(N - 1, -1, -1):
        A, B, b = problem.A[i], problem.B[i], problem.b[i]
        Kn, kn, cn, wi = K[i + 1], k[i + 1], c[i + 1], w[i]
        M = I + h * A
        KM = Kn @ M
        H = wi * h * problem.R[i] + h * h * B.T @ Kn @ B
        L = wi * h * problem.S[i] + h * B.T @ KM
        l = wi * h * problem.r[i] + h * h * B.T @ Kn @ b + h * B.T @ kn
        Kx = wi * h * problem.Q[i] + M.T @ KM
        kx = wi * h * problem.q[i] + M.T @ (Kn @ (h * b) + kn)
        cx = cn + h * h * b @ Kn @ b + 2.0 * h * kn @ b
        if noisy:
            C, D, sig = problem.C[i], problem.D[i], problem.sigma[i]
            # second moment of the sqrt(h) zeta term, E[zeta^2] = 1
            H = H + h * D.T @ Kn @ D
            L = L + h * D.T @ Kn @ C
            l = l + h * D.T @ Kn @ sig
            Kx = Kx + h * C.T @ Kn @ C
            kx = kx + h * C.T @ Kn @ sig
            cx = cx + h * sig @ Kn @ sig
        H_dag, _ = _pinv(sym(H))
        G_i = -H_dag @ L
        o_i = -H_dag @ l
        gains[i], offsets[i] = G_i, o_i
        K[i] = sym(Kx + L.T @ G_i)
        k[i] = kx + L.T @ o_i
        c[i] = cx + l @ o_i
    return DiscreteLQSolution(K=K, k=k, c=c, gains=gains, offsets=offsets)


def dp_solution(problem: ProblemSpec) -> DiscreteLQSolution:
    """Value recursion for the deterministic Euler system with stage weights exp(int E)."""
    for name in ("C", "D", "sigma", "F"):
        if _nonzero(getattr(problem, name)):
            raise RestrictionViolated(f"deterministic oracle needs {name} = 0")
    return _recursion(problem, noisy=False)


def dp_deterministic(problem: ProblemSpec, x) -> float:
    """Optimal discrete cost from ``x`` for a deterministic problem."""
    return dp_solution(problem).value(x)


def discrete_stochastic_lqr(problem: ProblemSpec, x=None) -> DiscreteLQSolution:
    """Exact Riccati recursion for the Euler chain with multiplicative noise, E = F = 0."""
    for name in ("E", "F"):
        if _nonzero(getattr(problem, name)):
            raise RestrictionViolated(f"stochastic oracle needs {name} = 0")
    sol = _recursion(problem, noisy=True)
    return sol if x is None else replace(sol, cost=sol.value(x))


def _constant_runs(problem: ProblemSpec) -> list[tuple[int, int]]:
    """Maximal index ranges [a, b) over which every coefficient is constant."""
    N = problem.grid.n_steps
    change = np.zeros(N, dtype=bool)
    for arr in problem.coefficients().values():
        flat = arr.reshape(N, -1)
        change[1:] |= np.any(flat[1:] != flat[:-1], axis=1)
    edges = [0, *(int(k) for k in np.flatnonzero(change)), N]
    return list(zip(edges[:-1], edges[1:]))


def classical_riccati_reference(problem: ProblemSpec, rtol: float = 1e-13, atol: float = 1e-13) -> np.ndarray:
    """Classical (E = F = 0) Riccati path at every node, integrated with an adaptive
    high-order scheme restarted at each coefficient jump. Plain inverse of R + D'PD."""
    from scipy.integrate import solve_ivp

    for name in ("E", "F"):
        if _nonzero(getattr(problem, name)):
            raise RestrictionViolated(f"classical reference needs {name} = 0")
    grid = problem.grid
    n = problem.n
    nodes = grid.nodes
    out = np.empty((grid.n_steps + 1, n, n))
    out[-1] = problem.G
    for a, b in reversed(_constant_runs(problem)):
        A, B, C, D = problem.A[a], problem.B[a], problem.C[a], problem.D[a]
        Q, S, R = problem.Q[a], problem.S[a], problem.R[a]

        def f(_s, y):
            P = y.reshape(n, n)
            L = B.T @ P + D.T @ P @ C + S
            W = R + D.T @ P @ D
            dP = -(P @ A + A.T @ P + C.T @ P @ C + Q - L.T @ np.linalg.solve(W, L))
            return dP.ravel()

        t_eval = nodes[a : b + 1][::-1]
        sol = solve_ivp(f, (nodes[b], nodes[a]), out[b].ravel(), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        out[a : b + 1] = sol.y.T.reshape(-1, n, n)[::-1]
    return out
