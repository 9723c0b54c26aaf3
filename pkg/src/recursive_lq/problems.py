"""Reference problems with known answers and seeded random problem families."""

from __future__ import annotations

import numpy as np

from .model import ProblemSpec, TimeGrid, ValidatedProblem, validate_problem

TANH_VALUE = float(np.tanh(1.0))
LINEAR_RATE = 2 * 0.1 + 0.2**2 + 0.3 + 2 * 0.5 * 0.2  # 2a + c^2 + e + 2fc
LINEAR_VALUE = float(np.exp(LINEAR_RATE) + (np.exp(LINEAR_RATE) - 1.0) / LINEAR_RATE)


def tanh_problem(n_steps: int = 1000, **extra) -> ValidatedProblem:
    """Scalar A=0, B=1, Q=R=1, G=0 on [0, 1]: P(s) = tanh(1 - s)."""
    return validate_problem(ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, n_steps), A=0.0, B=1.0, Q=1.0, R=1.0, **extra))


def linear_riccati_problem(n_steps: int = 1000) -> ValidatedProblem:
    """No control authority, so the Riccati equation is the linear ODE P' = -(rate P + 1)."""
    return validate_problem(
        ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, n_steps), A=0.1, C=0.2, E=0.3, F=0.5, Q=1.0, R=1.0, G=1.0)
    )


def unit_running_cost_problem(n_steps: int = 1000, E: float = 0.0) -> ValidatedProblem:
    """Frozen state x, unit running cost; J = integral of exp(E s) over [0, 1]."""
    return validate_problem(ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, n_steps), Q=1.0, R=1.0, E=E))


def _pieces(values: np.ndarray, n_steps: int) -> np.ndarray:
    """Stretch per-piece values over a grid whose step count is a multiple of the piece count."""
    k = values.shape[0]
    if n_steps % k:
        raise ValueError(f"n_steps={n_steps} is not a multiple of {k} pieces")
    return np.repeat(values, n_steps // k, axis=0)


def random_problem(
    rng: np.random.Generator,
    n_steps: int,
    n: int | None = None,
    m: int | None = None,
    pieces: int = 4,
    classical: bool = False,
    deterministic: bool = False,
    homogeneous: bool = False,
    T: float = 1.0,
) -> ValidatedProblem:
    """Random problem satisfying the standing hypotheses, piecewise constant on ``pieces`` blocks.

    The cost block [[Q, S'], [S, R]] is positive definite, so (q, r) is automatically in its range.
    """
    n = int(rng.integers(1, 4)) if n is None else n
    m = int(rng.integers(1, 4)) if m is None else m

    def mats(*shape, scale=0.5):
        return _pieces(scale * rng.standard_normal((pieces, *shape)), n_steps)

    blocks = []
    for _ in range(pieces):
        K = 0.6 * rng.standard_normal((n + m, n + m))
        blocks.append(K @ K.T + 0.2 * np.eye(n + m))
    M = np.array(blocks)
    L = 0.6 * rng.standard_normal((n, n))
    data = dict(
        A=mats(n, n),
        B=mats(n, m),
        Q=_pieces(M[:, :n, :n], n_steps),
        S=_pieces(M[:, n:, :n], n_steps),
        R=_pieces(M[:, n:, n:], n_steps),
    )
    G = L @ L.T
    g = np.zeros(n)
    if not deterministic:
        data.update(C=mats(n, n, scale=0.3), D=mats(n, m, scale=0.3))
    if not classical:
        data.update(E=_pieces(rng.uniform(-0.5, 0.5, pieces), n_steps), F=_pieces(rng.uniform(-0.8, 0.8, pieces), n_steps))
    if not homogeneous:
        data.update(b=mats(n, scale=0.3), q=mats(n, scale=0.3), r=mats(m, scale=0.3))
        g = G @ rng.standard_normal(n)
        if not deterministic:
            data.update(sigma=mats(n, scale=0.3))
    if deterministic and not classical:
        data["F"] = np.zeros(n_steps)
    return validate_problem(ProblemSpec.build(n, m, TimeGrid(0.0, T, n_steps), G=G, g=g, **data))


def classical_suite(n_steps: int, count: int = 10, seed: int = 3) -> list[ValidatedProblem]:
    """E = F = 0, with state and control noise."""
    rng = np.random.default_rng(seed)
    return [random_problem(rng, n_steps, classical=True) for _ in range(count)]


def deterministic_homogeneous_suite(n_steps: int = 1000, count: int = 6, seed: int = 5) -> list[ValidatedProblem]:
    """No noise, F = 0, no affine data; E is random. The scalar tanh problem comes first."""
    rng = np.random.default_rng(seed)
    suite = [tanh_problem(n_steps)]
    for _ in range(count - 1):
        suite.append(random_problem(rng, n_steps, deterministic=True, homogeneous=True))
    return suite


def scalar_deterministic_suite(n_steps: int = 1000) -> list[ValidatedProblem]:
    """Scalar problems whose state is deterministic (C = D = sigma = 0) but E, F may be nonzero."""
    grid = TimeGrid(0.0, 1.0, n_steps)
    build = lambda **kw: validate_problem(ProblemSpec.build(1, 1, grid, **kw))  # noqa: E731
    return [
        tanh_problem(n_steps),
        build(A=0.3, B=1.0, Q=1.0, R=1.0, G=0.5, E=0.5, F=0.8),
        build(A=-0.4, B=0.7, b=0.2, Q=2.0, S=0.5, R=1.0, q=0.3, r=-0.2, G=1.0, g=0.4, E=-0.3, F=0.6),
    ]


def stochastic_suite(n_steps: int, count: int = 5, seed: int = 11) -> list[ValidatedProblem]:
    """Full problems with noise and F != 0; the first is scalar."""
    rng = np.random.default_rng(seed)
    suite = [random_problem(rng, n_steps, n=1, m=1)]
    suite += [random_problem(rng, n_steps) for _ in range(count - 1)]
    return suite


def smooth_direction(rng: np.random.Generator, grid: TimeGrid, m: int, modes: int = 3) -> np.ndarray:
    """Deterministic control path (n_steps, m) from a few random Fourier modes."""
    s = grid.nodes[:-1]
    span = grid.t_end - grid.t_start
    out = rng.standard_normal(m) * np.ones((s.size, m))
    for k in range(1, modes + 1):
        ph = 2.0 * np.pi * k * (s - grid.t_start) / span
        out += np.outer(np.sin(ph), rng.standard_normal(m)) / k + np.outer(np.cos(ph), rng.standard_normal(m)) / k
    return out
