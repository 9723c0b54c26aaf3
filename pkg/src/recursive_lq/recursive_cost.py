"""Monte Carlo evaluation of the recursive cost through its weighted representation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainSuspect
from .model import ProblemSpec, ValidatedProblem
from .simulate import BrownianBatch, TrajectoryBatch, node_major

REJECT_FRACTION = 1e-3
DRIFT_SIGMAS = 6.0


@dataclass(frozen=True, eq=False)
class PhiWeights:
    """Per-path discount weights at the grid nodes, shape (n_paths, n_steps+1)."""

    phi: np.ndarray
    master_seed: int


@dataclass(frozen=True, eq=False)
class CostEstimate:
    mean: float
    std_error: float
    n_paths: int
    rejected: int = 0
    values: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "rejected_paths": self.rejected,
        }


def phi_weights(problem: ValidatedProblem, noise: BrownianBatch) -> PhiWeights:
    """Closed-form weights for piecewise-constant E and F; the first column is exactly 1."""
    if noise.grid != problem.grid:
        raise ValueError("noise grid does not match problem grid")
    h = problem.grid.h
    E = problem.E.reshape(-1)
    F = problem.F.reshape(-1)
    log_det = np.concatenate([[0.0], np.cumsum((E - 0.5 * F * F) * h)])
    log_phi = np.zeros((problem.grid.n_steps + 1, noise.n_paths))
    np.cumsum(noise.by_step * F[:, None], axis=0, out=log_phi[1:])
    log_phi += log_det[:, None]
    # stored node-major, exposed as (paths, nodes)
    return PhiWeights(phi=np.exp(log_phi).T, master_seed=noise.master_seed)


def running_cost(problem: ValidatedProblem, X_i, u_i, s_i: float) -> float:
    """Quadratic running cost with cross and linear terms at time ``s_i``."""
    i = problem.grid.interval_index(s_i)
    x = np.asarray(X_i, dtype=float).reshape(problem.n)
    u = np.asarray(u_i, dtype=float).reshape(problem.m)
    return float(
        x @ problem.Q[i] @ x
        + 2.0 * u @ problem.S[i] @ x
        + u @ problem.R[i] @ u
        + 2.0 * problem.q[i] @ x
        + 2.0 * problem.r[i] @ u
    )


def terminal_cost(problem: ValidatedProblem, X_T) -> float:
    x = np.asarray(X_T, dtype=float).reshape(problem.n)
    return float(x @ problem.G @ x + 2.0 * problem.g @ x)


def running_cost_nodes(problem: ProblemSpec, Xt: np.ndarray, Ut: np.ndarray, q=None, r=None, nodes=slice(None)) -> np.ndarray:
    """Running cost in node-major layout: Xt (K, n, P), Ut (K, m, P) -> (K, P) for the intervals ``nodes``.

    ``q`` and ``r`` default to the problem data and may be given per path as (K, n, P), (K, m, P).
    """
    q = problem.q[nodes, :, None] if q is None else q
    r = problem.r[nodes, :, None] if r is None else r
    x_part = (Xt * (problem.Q[nodes] @ Xt + 2.0 * q)).sum(axis=1)
    u_part = (Ut * (2.0 * (problem.S[nodes] @ Xt) + problem.R[nodes] @ Ut + 2.0 * r)).sum(axis=1)
    return x_part + u_part


def terminal_cost_paths(problem: ProblemSpec, XT: np.ndarray, g=None) -> np.ndarray:
    """Terminal cost for XT of shape (n, P); ``g`` may be given per path as (n, P)."""
    g = problem.g[:, None] if g is None else g
    return (XT * (problem.G @ XT + 2.0 * g)).sum(axis=0)


NODE_BLOCK = 8


def weighted_node_sum(w: np.ndarray, term, n_nodes: int) -> np.ndarray:
    """``sum_i w[i] * term(i)`` per path, where ``term(slice)`` returns a (len, P) block.

    Works through the nodes in small blocks so temporaries stay cache-sized.
    """
    acc = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for a in range(0, n_nodes, NODE_BLOCK):
            sl = slice(a, min(a + NODE_BLOCK, n_nodes))
            acc = acc + (w[sl] * term(sl)).sum(axis=0)
    return acc


def path_values(problem: ValidatedProblem, traj: TrajectoryBatch, phi: np.ndarray) -> np.ndarray:
    """Per-path ``phi_N xi + sum_i phi_i f_i h``."""
    Xt, Ut, w = node_major(traj.X), node_major(traj.U), phi.T
    N = problem.grid.n_steps
    run = weighted_node_sum(w, lambda sl: running_cost_nodes(problem, Xt[sl], Ut[sl], nodes=sl), N)
    xi = terminal_cost_paths(problem, Xt[-1])
    with np.errstate(over="ignore", invalid="ignore"):
        return w[-1] * xi + run * problem.grid.h


def summarize(values: np.ndarray, check_domain: bool = True) -> CostEstimate:
    """Mean and standard error of finite per-path values, with the domain heuristics."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    rejected = int((~finite).sum())
    n = values.size
    if check_domain and rejected > REJECT_FRACTION * n:
        raise DomainSuspect(f"{rejected} of {n} path values are non-finite")
    good = values[finite]
    k = good.size
    if k == 0:
        return CostEstimate(float("nan"), float("nan"), n, rejected, values)
    mean = float(good.mean())
    se = float(good.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    if check_domain and k >= 200 and se > 0:
        half = float(good[: k // 2].mean())
        # heavy tails show up as a running mean that keeps jumping
        if abs(half - mean) > DRIFT_SIGMAS * se:
            raise DomainSuspect(f"running mean unstable: first half {half:.6g} vs all {mean:.6g} (se {se:.3g})")
    return CostEstimate(mean, se, n, rejected, values)


def estimate_cost(problem: ValidatedProblem, traj: TrajectoryBatch, phi: PhiWeights, check_domain: bool = True) -> CostEstimate:
    """Cost estimate from trajectories and weights built on the same noise batch."""
    if traj.master_seed != phi.master_seed or traj.n_paths != phi.phi.shape[0]:
        raise ValueError("trajectories and weights come from different noise batches")
    if traj.grid != problem.grid:
        raise ValueError("trajectory grid does not match problem grid")
    return summarize(path_values(problem, traj, phi.phi), check_domain)


def paired_difference(a: CostEstimate, b: CostEstimate) -> tuple[float, float]:
    """Mean and standard error of the per-path difference ``a - b`` on common noise."""
    if a.values is None or b.values is None or a.values.shape != b.values.shape:
        raise ValueError("paired difference needs per-path values on the same batch")
    d = a.values - b.values
    d = d[np.isfinite(d)]
    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    return float(d.mean()), se
