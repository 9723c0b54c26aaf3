"""Backward integration of the extended Riccati equation and the feedback gain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Blowup, NotSymmetric
from .model import TimeGrid, ValidatedProblem, node_index

BLOWUP_THRESHOLD = 1e12
DEFAULT_REL_CUTOFF = 1e-12


@dataclass(frozen=True)
class GainCoefficients:
    bQ: np.ndarray  # PA + A'P + C'PC + Q
    bS: np.ndarray  # B'P + D'PC + S
    bR: np.ndarray  # R + D'PD


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: TimeGrid
    P: np.ndarray  # (N+1, n, n)
    range_flags: np.ndarray  # (N+1,) bool

    def at_node(self, k: int) -> np.ndarray:
        return self.P[k]


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _pinv(M: np.ndarray, rel_cutoff: float = DEFAULT_REL_CUTOFF) -> tuple[np.ndarray, int]:
    # hot path: M already symmetric
    lam, V = np.linalg.eigh(M)
    alam = np.abs(lam)
    top = alam.max()
    keep = alam > rel_cutoff * top if top > 0 else alam < 0
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    M_dag = (V * inv) @ V.T
    return 0.5 * (M_dag + M_dag.T), int(keep.sum())


def psd_pseudo_inverse(M: np.ndarray, rel_cutoff: float = DEFAULT_REL_CUTOFF) -> tuple[np.ndarray, int]:
    """Moore-Penrose inverse of a symmetric matrix via its eigen-decomposition.

    Eigenvalues with ``|lam| <= rel_cutoff * max|lam|`` are treated as zero.
    Returns ``(M_dag, rank)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = np.abs(M).max(initial=0.0)
    asym = np.abs(M - M.T).max(initial=0.0)
    if asym > 1e-10 * scale:
        raise NotSymmetric(f"asymmetry {asym:.3g} exceeds 1e-10 * |M|")
    return _pinv(sym(M), rel_cutoff)


def _gains(problem: ValidatedProblem, i: int, P: np.ndarray) -> GainCoefficients:
    A, B, C, D = problem.A[i], problem.B[i], problem.C[i], problem.D[i]
    PC = P @ C
    bQ = P @ A + A.T @ P + C.T @ PC + problem.Q[i]
    bS = B.T @ P + D.T @ PC + problem.S[i]
    bR = problem.R[i] + D.T @ P @ D
    return GainCoefficients(sym(bQ), bS, sym(bR))


def assemble_gain_coefficients(problem: ValidatedProblem, P: np.ndarray, s: float) -> GainCoefficients:
    return _gains(problem, problem.grid.interval_index(s), np.asarray(P, dtype=float))


def _gain_numerator(problem: ValidatedProblem, i: int, P: np.ndarray, gc: GainCoefficients) -> np.ndarray:
    # S(P) + F D'P, the m x n matrix that the gain acts on
    return gc.bS + problem.F[i] * (problem.D[i].T @ P)


def _rhs(problem: ValidatedProblem, i: int, P: np.ndarray) -> np.ndarray:
    gc = _gains(problem, i, P)
    E, F, C = problem.E[i], problem.F[i], problem.C[i]
    num = _gain_numerator(problem, i, P, gc)
    R_dag, _ = _pinv(gc.bR)
    inner = gc.bQ + E * P + F * (C.T @ P + P @ C) - num.T @ R_dag @ num
    return -sym(inner)


def riccati_rhs(problem: ValidatedProblem, P: np.ndarray, s: float) -> np.ndarray:
    """Time derivative of P at ``(s, P)``."""
    return _rhs(problem, problem.grid.interval_index(s), np.asarray(P, dtype=float))


def _gain(problem: ValidatedProblem, i: int, P: np.ndarray) -> np.ndarray:
    gc = _gains(problem, i, P)
    R_dag, _ = _pinv(gc.bR)
    return -R_dag @ _gain_numerator(problem, i, P, gc)


def feedback_gain(problem: ValidatedProblem, P: np.ndarray, s: float) -> np.ndarray:
    """Optimal gain ``-(R + D'PD)^+ [(B + F D)'P + D'PC + S]``."""
    return _gain(problem, problem.grid.interval_index(s), np.asarray(P, dtype=float))


def range_ok(M: np.ndarray, X: np.ndarray, tol: float) -> bool:
    """Columns of ``X`` lie in the range of the symmetric matrix ``M``."""
    M_dag, _ = _pinv(sym(M))
    resid = X - M @ (M_dag @ X)
    return bool(np.linalg.norm(resid) <= tol * (1.0 + np.linalg.norm(X)))


def gain_range_flag(problem: ValidatedProblem, k: int, P: np.ndarray) -> bool:
    i = node_index(problem, k)
    gc = _gains(problem, i, P)
    return range_ok(gc.bR, _gain_numerator(problem, i, P, gc), problem.report.tol_range)


def _interval_rhs(problem: ValidatedProblem, i: int):
    """Riccati right-hand side with the interval's coefficients bound once (solver hot loop)."""
    A, B, C, D = problem.A[i], problem.B[i], problem.C[i], problem.D[i]
    Q, S, R = problem.Q[i], problem.S[i], problem.R[i]
    E, F = float(problem.E[i]), float(problem.F[i])
    At, Bt, Ct, Dt = A.T, B.T, C.T, D.T

    def rhs(_tau, P):
        PC = P @ C
        PA = P @ A
        DtP = Dt @ P
        num = Bt @ P + DtP @ C + S + F * DtP
        bR = R + DtP @ D
        R_dag, _ = _pinv(0.5 * (bR + bR.T))
        inner = PA + At @ P + Ct @ PC + Q + E * P + F * (Ct @ P + PC) - num.T @ R_dag @ num
        return -0.5 * (inner + inner.T)

    return rhs


def rk4_backward(rhs, y_end: np.ndarray, h: float, substeps: int, project=None) -> np.ndarray:
    """Integrate ``y' = rhs(tau, y)`` from tau=h down to tau=0 (tau local to the interval)."""
    dt = -h / substeps
    y = y_end
    tau = h
    for _ in range(substeps):
        k1 = rhs(tau, y)
        k2 = rhs(tau + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(tau + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(tau + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if project is not None:
            y = project(y)
        tau += dt
    return y


def solve_riccati(problem: ValidatedProblem, substeps: int = 1) -> RiccatiSolution:
    """Integrate P backward from P(T) = G with classic RK4, node to node."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = problem.grid
    N, n = grid.n_steps, problem.n
    P = np.empty((N + 1, n, n))
    P[N] = problem.G
    for i in range(N - 1, -1, -1):
        Pi = rk4_backward(_interval_rhs(problem, i), P[i + 1], grid.h, substeps, project=sym)
        big = np.abs(Pi).max()
        if not np.isfinite(big) or big > BLOWUP_THRESHOLD:
            raise Blowup(float(grid.nodes[i]), float(big))
        P[i] = Pi
    flags = np.array([gain_range_flag(problem, k, P[k]) for k in range(N + 1)])
    return RiccatiSolution(grid=grid, P=P, range_flags=flags)
