"""Directional derivatives of the recursive cost, the decoupled adjoint pair and the stationarity residual."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine_term import EtaSolution
from .model import TimeGrid, ValidatedProblem
from .recursive_cost import CostEstimate, PhiWeights, estimate_cost, paired_difference, phi_weights, summarize, weighted_node_sum
from .riccati import RiccatiSolution
from .simulate import (
    BrownianBatch,
    ControlSpec,
    PerturbedControl,
    PiecewiseControl,
    PathwiseControl,
    TrajectoryBatch,
    _euler,
    node_major,
    open_loop_values,
    simulate,
)


@dataclass(frozen=True, eq=False)
class VariationalBatch:
    X1: np.ndarray  # (P, N+1, n), starts at zero
    U1: np.ndarray  # (P, N, m)
    master_seed: int


@dataclass(frozen=True)
class GradientReport:
    adjoint_value: float
    fd_value: float
    rel_error: float
    std_errors: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "adjoint_value": self.adjoint_value,
            "fd_value": self.fd_value,
            "rel_error": self.rel_error,
            "adjoint_std_error": self.std_errors[0],
            "fd_std_error": self.std_errors[1],
        }


@dataclass(frozen=True, eq=False)
class AdjointPair:
    Y: np.ndarray  # (P, N+1, n): P X + eta
    Z: np.ndarray  # (P, N, n): P_k (C X_k + D u_k + sigma) with the control applied from node k
    Z_minus: np.ndarray  # (P, N+1, n): same at node k with the control held over the previous interval


@dataclass(frozen=True, eq=False)
class ResidualReport:
    grid: TimeGrid
    l2: np.ndarray  # (N+1,)
    residuals: np.ndarray  # (P, N+1, m)

    @property
    def max(self) -> float:
        return float(self.l2.max())


def simulate_variational(problem: ValidatedProblem, direction: ControlSpec, noise: BrownianBatch) -> VariationalBatch:
    """Homogeneous state response to ``direction`` from a zero initial state."""
    U1 = open_loop_values(direction, problem, noise)
    X1, U1 = _euler(problem, np.zeros(problem.n), node_major(U1), noise.by_step, None, affine=False)
    return VariationalBatch(X1=X1, U1=U1, master_seed=noise.master_seed)


def derivative_path_values(problem: ValidatedProblem, base: TrajectoryBatch, var: VariationalBatch, phi: np.ndarray) -> np.ndarray:
    """Per-path weighted first variation of the cost along ``var``."""
    Xt, Ut = node_major(base.X), node_major(base.U)
    X1t, U1t = node_major(var.X1), node_major(var.U1)
    St = np.swapaxes(problem.S, 1, 2)

    def first_variation(sl):
        X, U = Xt[sl], Ut[sl]
        gx = problem.Q[sl] @ X + St[sl] @ U + problem.q[sl, :, None]
        gu = problem.S[sl] @ X + problem.R[sl] @ U + problem.r[sl, :, None]
        return 2.0 * ((gx * X1t[sl]).sum(axis=1) + (gu * U1t[sl]).sum(axis=1))

    w = phi.T
    run = weighted_node_sum(w, first_variation, problem.grid.n_steps)
    term = 2.0 * ((problem.G @ Xt[-1] + problem.g[:, None]) * X1t[-1]).sum(axis=0)
    with np.errstate(over="ignore", invalid="ignore"):
        return w[-1] * term + run * problem.grid.h


def directional_derivative(
    problem: ValidatedProblem,
    base_traj: TrajectoryBatch,
    direction: ControlSpec,
    noise: BrownianBatch,
    check_domain: bool = True,
    phi: PhiWeights | None = None,
) -> CostEstimate:
    """Monte Carlo estimate of the derivative of J at the base control along ``direction``.

    The value is ``.mean``; ``.std_error`` is its standard error.
    """
    if base_traj.master_seed != noise.master_seed or base_traj.n_paths != noise.n_paths:
        raise ValueError("base trajectories were not simulated on this noise batch")
    var = simulate_variational(problem, direction, noise)
    phi = phi_weights(problem, noise) if phi is None else phi
    return summarize(derivative_path_values(problem, base_traj, var, phi.phi), check_domain)


def gradient_check(
    problem: ValidatedProblem,
    x,
    control: ControlSpec,
    direction: PiecewiseControl | PathwiseControl,
    noise: BrownianBatch,
    eps: float = 1e-3,
) -> GradientReport:
    """Compare the adjoint-form derivative with a central difference of J on common noise."""
    phi = phi_weights(problem, noise)
    base = simulate(problem, x, control, noise)
    adj = directional_derivative(problem, base, direction, noise, phi=phi)
    plus = estimate_cost(problem, simulate(problem, x, PerturbedControl(control, direction, eps), noise), phi)
    minus = estimate_cost(problem, simulate(problem, x, PerturbedControl(control, direction, -eps), noise), phi)
    diff, diff_se = paired_difference(plus, minus)
    fd = diff / (2.0 * eps)
    rel = abs(adj.mean - fd) / max(1.0, abs(fd))
    return GradientReport(adj.mean, fd, rel, (adj.std_error, diff_se / (2.0 * eps)))


def decouple(problem: ValidatedProblem, riccati: RiccatiSolution, eta: EtaSolution, traj: TrajectoryBatch) -> AdjointPair:
    """Four-step-scheme pair built from the Riccati and eta solutions along ``traj``."""
    P = riccati.P
    Xt, Ut = node_major(traj.X), node_major(traj.U)
    C, D, sig = problem.C, problem.D, problem.sigma[:, :, None]
    Y = P @ Xt + eta.eta[:, :, None]
    # diffusion coefficient with the control applied from node k
    Z = P[:-1] @ (C @ Xt[:-1] + D @ Ut + sig)
    # at node k+1 the state has moved but the control of interval k is still in force
    Z_minus = np.empty_like(Y)
    Z_minus[0] = Z[0]
    Z_minus[1:] = P[1:] @ (C @ Xt[1:] + D @ Ut + sig)
    return AdjointPair(Y=np.moveaxis(Y, -1, 0), Z=np.moveaxis(Z, -1, 0), Z_minus=np.moveaxis(Z_minus, -1, 0))


def stationarity_residual(problem: ValidatedProblem, traj: TrajectoryBatch, pair: AdjointPair) -> ResidualReport:
    """Residual of the maximum condition at every node, per path.

    Node 0 uses the first interval's control; node k >= 1 uses the control held over
    interval k-1 together with the coefficients of that interval.
    """
    N = problem.grid.n_steps
    idx = np.concatenate([[0], np.arange(N)])
    Xt, Uk = node_major(traj.X), node_major(traj.U)[idx]
    BF = problem.B + problem.F.reshape(-1, 1, 1) * problem.D
    tr = lambda M: np.swapaxes(M[idx], 1, 2)  # noqa: E731
    res = (
        tr(BF) @ node_major(pair.Y)
        + tr(problem.D) @ node_major(pair.Z_minus)
        + problem.S[idx] @ Xt
        + problem.R[idx] @ Uk
        + problem.r[idx][:, :, None]
    )
    l2 = np.sqrt(np.mean(np.sum(res * res, axis=1), axis=1))
    return ResidualReport(grid=problem.grid, l2=l2, residuals=np.moveaxis(res, -1, 0))
