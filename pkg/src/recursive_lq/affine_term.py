"""Terminal-value ODE for the affine term eta and the resulting feedback law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Blowup, SynthesisInvalid
from .model import TimeGrid, ValidatedProblem, node_index
from .riccati import (
    BLOWUP_THRESHOLD,
    RiccatiSolution,
    _gain,
    _gain_numerator,
    _gains,
    _pinv,
    psd_pseudo_inverse,
    range_ok,
    rk4_backward,
)


@dataclass(frozen=True, eq=False)
class EtaSolution:
    grid: TimeGrid
    eta: np.ndarray  # (N+1, n)
    range_flags: np.ndarray  # (N+1,) bool


@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """Closed-loop strategy u = Psi(s) X + v(s), sampled at grid nodes."""

    grid: TimeGrid
    Psi: np.ndarray  # (N+1, m, n)
    v: np.ndarray  # (N+1, m)


def _eta_rhs(problem: ValidatedProblem, i: int, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
    A, B, C, D = problem.A[i], problem.B[i], problem.C[i], problem.D[i]
    E, F = problem.E[i], problem.F[i]
    I = np.eye(problem.n)
    gc = _gains(problem, i, P)
    R_dag, _ = _pinv(gc.bR)
    K = _gain_numerator(problem, i, P, gc).T @ R_dag  # (S(P)' + F PD) R(P)^+
    BF = B + F * D
    Psig = P @ problem.sigma[i]
    gamma = (
        ((A + E * I + F * C).T - K @ BF.T) @ eta
        + ((C + F * I).T - K @ D.T) @ Psig
        - K @ problem.r[i]
        + P @ problem.b[i]
        + problem.q[i]
    )
    return -gamma


def eta_rhs(problem: ValidatedProblem, P: np.ndarray, eta: np.ndarray, s: float) -> np.ndarray:
    """Time derivative of eta at ``(s, P, eta)``."""
    return _eta_rhs(problem, problem.grid.interval_index(s), np.asarray(P, float), np.asarray(eta, float))


def eta_rhs_direct(problem: ValidatedProblem, P: np.ndarray, eta: np.ndarray, s: float) -> np.ndarray:
    """Second, independently written form of :func:`eta_rhs` used as a transcription check."""
    i = problem.grid.interval_index(s)
    A, B, C, D = problem.A[i], problem.B[i], problem.C[i], problem.D[i]
    E, F, S, R = problem.E[i], problem.F[i], problem.S[i], problem.R[i]
    n = problem.n
    BF = B + F * D
    L = P @ BF + C.T @ P @ D + S.T
    Rinv, _ = psd_pseudo_inverse(R + D.T @ P @ D)
    first = (A + E * np.eye(n) + F * C).T - L @ Rinv @ BF.T
    second = (C + F * np.eye(n)).T - L @ Rinv @ D.T
    total = first @ eta + second @ P @ problem.sigma[i] - L @ Rinv @ problem.r[i] + P @ problem.b[i] + problem.q[i]
    return -total


def _feedforward_numerator(problem: ValidatedProblem, i: int, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
    BF = problem.B[i] + problem.F[i] * problem.D[i]
    return BF.T @ eta + problem.D[i].T @ P @ problem.sigma[i] + problem.r[i]


def _feedforward(problem: ValidatedProblem, i: int, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
    R_dag, _ = _pinv(_gains(problem, i, P).bR)
    return -R_dag @ _feedforward_numerator(problem, i, P, eta)


def feedforward(problem: ValidatedProblem, P: np.ndarray, eta: np.ndarray, s: float) -> np.ndarray:
    """Optimal feedforward ``-(R + D'PD)^+ [(B + F D)'eta + D'P sigma + r]``."""
    return _feedforward(problem, problem.grid.interval_index(s), np.asarray(P, float), np.asarray(eta, float))


def solve_eta(problem: ValidatedProblem, riccati: RiccatiSolution, substeps: int = 1) -> EtaSolution:
    """Integrate eta backward from eta(T) = g; P is linearly interpolated inside each interval."""
    grid = problem.grid
    if riccati.grid != grid:
        raise ValueError("Riccati solution lives on a different grid")
    N, h = grid.n_steps, grid.h
    eta = np.empty((N + 1, problem.n))
    eta[N] = problem.g
    for i in range(N - 1, -1, -1):
        P0, P1 = riccati.P[i], riccati.P[i + 1]

        def rhs(tau, y, i=i, P0=P0, P1=P1):
            return _eta_rhs(problem, i, P0 + (tau / h) * (P1 - P0), y)

        e = rk4_backward(rhs, eta[i + 1], h, substeps)
        big = np.abs(e).max(initial=0.0)
        if not np.isfinite(big) or big > BLOWUP_THRESHOLD:
            raise Blowup(float(grid.nodes[i]), float(big))
        eta[i] = e
    flags = np.empty(N + 1, dtype=bool)
    for k in range(N + 1):
        i = node_index(problem, k)
        P = riccati.P[k]
        flags[k] = range_ok(_gains(problem, i, P).bR, _feedforward_numerator(problem, i, P, eta[k]), problem.report.tol_range)
    return EtaSolution(grid=grid, eta=eta, range_flags=flags)


def synthesize_law(
    problem: ValidatedProblem,
    riccati: RiccatiSolution,
    eta: EtaSolution,
    allow_range_failures: bool = False,
) -> FeedbackLaw:
    if riccati.grid != eta.grid or riccati.grid != problem.grid:
        raise ValueError("Riccati and eta solutions must share the problem grid")
    bad = np.flatnonzero(~(riccati.range_flags & eta.range_flags))
    if bad.size and not allow_range_failures:
        k = int(bad[0])
        which = "gain" if not riccati.range_flags[k] else "feedforward"
        raise SynthesisInvalid(f"{which} range condition fails at node {k} (s={problem.grid.nodes[k]:.6g})")
    N = problem.grid.n_steps
    Psi = np.empty((N + 1, problem.m, problem.n))
    v = np.empty((N + 1, problem.m))
    for k in range(N + 1):
        i = node_index(problem, k)
        Psi[k] = _gain(problem, i, riccati.P[k])
        v[k] = _feedforward(problem, i, riccati.P[k], eta.eta[k])
    return FeedbackLaw(grid=problem.grid, Psi=Psi, v=v)
