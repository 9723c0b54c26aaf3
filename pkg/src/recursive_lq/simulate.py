"""Brownian increments and Euler-Maruyama simulation of the controlled state equation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from .affine_term import FeedbackLaw
from .errors import NonFinite
from .model import TimeGrid, ValidatedProblem

THREADS_ENV = "RECURSIVE_LQ_THREADS"
_CHUNK = 4096


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class BrownianBatch:
    grid: TimeGrid
    increments: np.ndarray  # (n_paths, n_steps)
    master_seed: int
    stream_ids: np.ndarray  # (n_paths,)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @cached_property
    def by_step(self) -> np.ndarray:
        """Increments as a contiguous (n_steps, n_paths) array."""
        return np.ascontiguousarray(self.increments.T)


def node_major(a: np.ndarray) -> np.ndarray:
    """(paths, nodes, dim) -> (nodes, dim, paths); a no-copy view for arrays built here."""
    return np.moveaxis(a, 0, -1)


def _fill_paths(out: np.ndarray, seed: int, ids: np.ndarray, scale: float) -> None:
    # one Philox stream per path, keyed by (master_seed, path id)
    bitgen = np.random.Philox(key=0)
    gen = np.random.Generator(bitgen)
    state = bitgen.state
    key = np.array([seed, 0], dtype=np.uint64)
    for row, pid in enumerate(ids):
        key[1] = pid
        state["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        state["state"]["key"] = key.copy()
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        bitgen.state = state
        out[row] = gen.standard_normal(out.shape[1])
    out *= scale


def sample_brownian(grid: TimeGrid, n_paths: int, master_seed: int = 0, workers: int | None = None) -> BrownianBatch:
    """Normal(0, h) increments; path ``p`` depends only on ``(master_seed, p)``."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    ids = np.arange(n_paths, dtype=np.uint64)
    inc = np.empty((n_paths, grid.n_steps))
    scale = np.sqrt(grid.h)
    chunks = [slice(a, min(a + _CHUNK, n_paths)) for a in range(0, n_paths, _CHUNK)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(chunks) == 1:
        for sl in chunks:
            _fill_paths(inc[sl], master_seed, ids[sl], scale)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda sl: _fill_paths(inc[sl], master_seed, ids[sl], scale), chunks))
    inc.setflags(write=False)
    return BrownianBatch(grid=grid, increments=inc, master_seed=int(master_seed), stream_ids=ids)


# --- controls ----------------------------------------------------------------


@dataclass(frozen=True)
class ZeroControl:
    pass


@dataclass(frozen=True, eq=False)
class ConstantControl:
    u0: np.ndarray


@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """Deterministic control, one value per grid interval: shape (n_steps, m)."""

    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PathwiseControl:
    """Adapted open-loop control given path by path: shape (n_paths, n_steps, m).

    Typically the recorded outcome of a feedback law on a fixed noise batch.
    """

    values: np.ndarray


@dataclass(frozen=True, eq=False)
class FeedbackControl:
    law: FeedbackLaw


@dataclass(frozen=True, eq=False)
class PerturbedControl:
    """Outcome of ``base`` on the same noise, shifted by ``epsilon * direction``."""

    base: "ControlSpec"
    direction: PiecewiseControl | PathwiseControl
    epsilon: float


ControlSpec = Union[ZeroControl, ConstantControl, PiecewiseControl, PathwiseControl, FeedbackControl, PerturbedControl]


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    grid: TimeGrid
    X: np.ndarray  # (n_paths, n_steps+1, n)
    U: np.ndarray  # (n_paths, n_steps, m)
    master_seed: int

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]


def open_loop_values(control: ControlSpec, problem: ValidatedProblem, noise: BrownianBatch) -> np.ndarray:
    """Control values as an array broadcastable to (n_paths, n_steps, m)."""
    N, m = problem.grid.n_steps, problem.m
    if isinstance(control, ZeroControl):
        return np.zeros((1, N, m))
    if isinstance(control, ConstantControl):
        u0 = np.asarray(control.u0, dtype=float).reshape(m)
        return np.broadcast_to(u0, (1, N, m)).copy()
    if isinstance(control, PiecewiseControl):
        vals = np.asarray(control.values, dtype=float)
        if vals.shape != (N, m):
            raise ValueError(f"piecewise control must have shape {(N, m)}, got {vals.shape}")
        return vals[None]
    if isinstance(control, PathwiseControl):
        vals = np.asarray(control.values, dtype=float)
        if vals.shape != (noise.n_paths, N, m):
            raise ValueError(f"pathwise control must have shape {(noise.n_paths, N, m)}, got {vals.shape}")
        return vals
    if isinstance(control, PerturbedControl) and not isinstance(control.base, FeedbackControl):
        base = open_loop_values(control.base, problem, noise)
        return base + control.epsilon * open_loop_values(control.direction, problem, noise)
    raise TypeError(f"{type(control).__name__} needs the initial state; use simulate()")


def _euler(problem: ValidatedProblem, x: np.ndarray, U, dW: np.ndarray, law: FeedbackLaw | None, affine: bool):
    """Euler-Maruyama in node-major layout; ``U`` is (N, m, P) or broadcastable, ``dW`` is (N, P).

    Returns views shaped (P, N+1, n) and (P, N, m).
    """
    grid = problem.grid
    N, n, m = grid.n_steps, problem.n, problem.m
    P = dW.shape[1]
    h = grid.h
    Xt = np.empty((N + 1, n, P))
    Xt[0] = x[:, None]
    if law is None:
        Ut = np.empty((N, m, P))
        Ut[...] = U
    else:
        Ut = np.empty((N, m, P))
    # drift rows on top, diffusion rows below: one product each for state and control
    AC = np.concatenate([problem.A, problem.C], axis=1)
    BD = np.concatenate([problem.B, problem.D], axis=1)
    bs = np.concatenate([problem.b, problem.sigma], axis=1)[:, :, None]
    # overflow is reported once below, with its location
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N):
            xi = Xt[i]
            if law is not None:
                np.matmul(law.Psi[i], xi, out=Ut[i])
                Ut[i] += law.v[i][:, None]
            y = AC[i] @ xi
            y += BD[i] @ Ut[i]
            if affine:
                y += bs[i]
            y[:n] *= h
            y[n:] *= dW[i]
            nxt = Xt[i + 1]
            np.add(xi, y[:n], out=nxt)
            nxt += y[n:]
    if not np.all(np.isfinite(Xt)):
        k, _, p = np.argwhere(~np.isfinite(Xt))[0]
        raise NonFinite(f"state became non-finite on path {p} at node {k}")
    return np.moveaxis(Xt, -1, 0), np.moveaxis(Ut, -1, 0)


def simulate(problem: ValidatedProblem, x, control: ControlSpec, noise: BrownianBatch) -> TrajectoryBatch:
    """Euler-Maruyama paths of the state equation, one per noise path."""
    if noise.grid != problem.grid:
        raise ValueError("noise grid does not match problem grid")
    x = np.asarray(x, dtype=float).reshape(problem.n)
    if isinstance(control, FeedbackControl):
        X, U = _euler(problem, x, None, noise.by_step, control.law, affine=True)
    else:
        if isinstance(control, PerturbedControl):
            base = simulate(problem, x, control.base, noise).U
            U = base + control.epsilon * open_loop_values(control.direction, problem, noise)
        else:
            U = open_loop_values(control, problem, noise)
        X, U = _euler(problem, x, node_major(U), noise.by_step, None, affine=True)
    return TrajectoryBatch(grid=problem.grid, X=X, U=U, master_seed=noise.master_seed)


def superposition_check(problem: ValidatedProblem, x1, u1: ControlSpec, x2, u2: ControlSpec, noise: BrownianBatch) -> float:
    """Relative affinity defect of the discrete state map on common noise.

    Returns ``max |X(x1+x2, u1+u2) - X(x1, u1) - X(x2, u2) + X(0, 0)| / max(1, max |X|)``.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    v1 = open_loop_values(u1, problem, noise)
    v2 = open_loop_values(u2, problem, noise)
    dW = noise.by_step
    X12 = _euler(problem, x1 + x2, node_major(v1 + v2), dW, None, True)[0]
    X1 = _euler(problem, x1, node_major(v1), dW, None, True)[0]
    X2 = _euler(problem, x2, node_major(v2), dW, None, True)[0]
    X0 = _euler(problem, np.zeros(problem.n), node_major(np.zeros_like(v1)), dW, None, True)[0]
    resid = np.abs(X12 - X1 - X2 + X0).max()
    scale = max(1.0, np.abs(X12).max(), np.abs(X1).max(), np.abs(X2).max(), np.abs(X0).max())
    return float(resid / scale)
