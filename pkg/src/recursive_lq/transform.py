"""Change of variables that turns the recursive cost into a classical discounted LQ cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ProblemSpec, ValidatedProblem
from .recursive_cost import (
    CostEstimate,
    estimate_cost,
    phi_weights,
    running_cost_nodes,
    summarize,
    terminal_cost_paths,
    weighted_node_sum,
)
from .simulate import BrownianBatch, TrajectoryBatch, node_major


def _log_lambda_nodes(problem: ProblemSpec) -> np.ndarray:
    """Cumulative integral of E - F^2/2 from the initial time to each node."""
    E = problem.E.reshape(-1)
    F = problem.F.reshape(-1)
    return np.concatenate([[0.0], np.cumsum((E - 0.5 * F * F) * problem.grid.h)])


def _node_of(problem: ProblemSpec, s: float) -> int:
    grid = problem.grid
    k = (s - grid.t_start) / grid.h
    kr = int(round(k))
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)) or not 0 <= kr <= grid.n_steps:
        raise ValueError(f"time {s!r} is not a grid node")
    return kr


def lambda_factor(problem: ProblemSpec, s: float, t: float) -> float:
    """exp of the integral of (E - F^2/2) from ``t`` to ``s``; both must be grid nodes."""
    L = _log_lambda_nodes(problem)
    return float(np.exp(L[_node_of(problem, s)] - L[_node_of(problem, t)]))


def lambda_table(problem: ProblemSpec) -> np.ndarray:
    """All node pairs: entry [i, j] is the factor from node j to node i."""
    L = _log_lambda_nodes(problem)
    return np.exp(L[:, None] - L[None, :])


def transformed_coefficients(problem: ProblemSpec) -> ProblemSpec:
    """Deterministic hatted coefficients; b carries only its deterministic part b + F sigma / 2."""
    F = problem.F.reshape(-1, 1, 1)
    I = np.eye(problem.n)
    return problem.replace(
        A=problem.A + 0.5 * F * problem.C,
        B=problem.B + 0.5 * F * problem.D,
        C=problem.C + 0.5 * F * I,
        b=problem.b + 0.5 * problem.F.reshape(-1, 1) * problem.sigma,
    )


@dataclass(frozen=True, eq=False)
class TransformedPath:
    """Rescaled state, control and linear cost data, node-major with paths last."""

    X: np.ndarray  # (N+1, n, P)
    U: np.ndarray  # (N, m, P)
    g: np.ndarray  # (n, P)
    q: np.ndarray  # (N, n, P)
    r: np.ndarray  # (N, m, P)


def transform_paths(problem: ValidatedProblem, traj: TrajectoryBatch, noise: BrownianBatch) -> TransformedPath:
    F = problem.F.reshape(-1)
    half = np.zeros((problem.grid.n_steps + 1, noise.n_paths))
    np.cumsum(0.5 * noise.by_step * F[:, None], axis=0, out=half[1:])
    scale = np.exp(half)[:, None, :]
    return TransformedPath(
        X=scale * node_major(traj.X),
        U=scale[:-1] * node_major(traj.U),
        g=scale[-1] * problem.g[:, None],
        q=scale[:-1] * problem.q[:, :, None],
        r=scale[:-1] * problem.r[:, :, None],
    )


def transformed_path_values(problem: ValidatedProblem, traj: TrajectoryBatch, noise: BrownianBatch) -> np.ndarray:
    """Per-path integrand of the classical cost, before the Lambda(T, t) factor."""
    tp = transform_paths(problem, traj, noise)
    L = _log_lambda_nodes(problem)
    w = np.exp(L[:-1] - L[-1])[:, None]  # Lambda(s_i, T) = 1 / Lambda(T, s_i)
    run = weighted_node_sum(
        w, lambda sl: running_cost_nodes(problem, tp.X[sl], tp.U[sl], tp.q[sl], tp.r[sl], nodes=sl), problem.grid.n_steps
    )
    xi = terminal_cost_paths(problem, tp.X[-1], tp.g)
    with np.errstate(over="ignore", invalid="ignore"):
        return xi + run * problem.grid.h


def estimate_transformed_cost(problem: ValidatedProblem, traj: TrajectoryBatch, noise: BrownianBatch, check_domain: bool = True) -> CostEstimate:
    """Classical cost of the rescaled trajectories (without the Lambda(T, t) factor)."""
    if traj.master_seed != noise.master_seed or traj.n_paths != noise.n_paths:
        raise ValueError("trajectories were not simulated on this noise batch")
    return summarize(transformed_path_values(problem, traj, noise), check_domain)


@dataclass(frozen=True)
class CrossCheck:
    J: float
    J_se: float
    J_hat: float
    lam: float
    lam_J_hat: float
    combined_se: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "J_std_error": self.J_se,
            "J_hat": self.J_hat,
            "lambda_T_t": self.lam,
            "lambda_J_hat": self.lam_J_hat,
            "combined_std_error": self.combined_se,
            "pass": self.passed,
        }


def cross_check(problem: ValidatedProblem, traj: TrajectoryBatch, noise: BrownianBatch) -> CrossCheck:
    """Compare J with Lambda(T, t) * J_hat on common noise.

    The combined standard error is the root sum of squares of the two estimators' errors.
    """
    J = estimate_cost(problem, traj, phi_weights(problem, noise))
    Jh = estimate_transformed_cost(problem, traj, noise)
    lam = lambda_factor(problem, problem.grid.t_end, problem.grid.t_start)
    lJ = lam * Jh.mean
    se = float(np.hypot(J.std_error, lam * Jh.std_error))
    gap = abs(J.mean - lJ)
    # per-path identity holds to rounding, so allow a rounding floor on top of the statistical band
    floor = 1e-10 * max(1.0, abs(J.mean))
    return CrossCheck(J.mean, J.std_error, Jh.mean, lam, lJ, se, bool(gap <= 3.0 * se + floor))
