import numpy as np
import pytest

from recursive_lq.acceptance import residual_for
from recursive_lq.adjoint import (
    decouple,
    directional_derivative,
    gradient_check,
    simulate_variational,
    stationarity_residual,
)
from recursive_lq.affine_term import solve_eta, synthesize_law
from recursive_lq.model import ProblemSpec, TimeGrid, validate_problem
from recursive_lq.problems import random_problem, smooth_direction, stochastic_suite, tanh_problem
from recursive_lq.riccati import solve_riccati
from recursive_lq.simulate import (
    FeedbackControl,
    PathwiseControl,
    PiecewiseControl,
    ZeroControl,
    sample_brownian,
    simulate,
)

from conftest import scalar


def _optimum(p, n_paths=200, seed=0, x=None):
    ric = solve_riccati(p)
    eta = solve_eta(p, ric)
    law = synthesize_law(p, ric, eta)
    noise = sample_brownian(p.grid, n_paths, seed)
    x = np.ones(p.n) if x is None else x
    return ric, eta, law, noise, simulate(p, x, FeedbackControl(law), noise)


# --- variational system -------------------------------------------------------


def test_zero_direction_gives_zero_variation():
    p = stochastic_suite(20)[2]
    var = simulate_variational(p, ZeroControl(), sample_brownian(p.grid, 10, 0))
    np.testing.assert_array_equal(var.X1, 0.0)


def test_pure_integration_variation():
    p = scalar(n_steps=50, B=1.0, R=1.0)
    var = simulate_variational(p, PiecewiseControl(np.ones((50, 1))), sample_brownian(p.grid, 3, 0))
    np.testing.assert_allclose(var.X1[:, :, 0], np.broadcast_to(p.grid.nodes, (3, 51)), atol=1e-14)


def test_variation_scales_bitwise():
    p = stochastic_suite(20)[3]
    noise = sample_brownian(p.grid, 30, 0)
    d = smooth_direction(np.random.default_rng(2), p.grid, p.m)
    one = simulate_variational(p, PiecewiseControl(d), noise).X1
    two = simulate_variational(p, PiecewiseControl(2.0 * d), noise).X1
    np.testing.assert_array_equal(two, 2.0 * one)


# --- directional derivative ----------------------------------------------------


def test_scalar_closed_form_derivative():
    p = tanh_problem(1000)
    noise = sample_brownian(p.grid, 2, 0)
    base = simulate(p, [1.0], ZeroControl(), noise)
    dd = directional_derivative(p, base, PiecewiseControl(np.ones((1000, 1))), noise)
    assert dd.mean == pytest.approx(1.0 - p.grid.h, abs=1e-12)  # left-point sum of 2s
    assert abs(dd.mean - 1.0) <= 2e-3


def test_homogeneous_zero_base_has_zero_derivative():
    p = random_problem(np.random.default_rng(3), 20, homogeneous=True)
    noise = sample_brownian(p.grid, 50, 0)
    base = simulate(p, np.zeros(p.n), ZeroControl(), noise)
    for seed in range(3):
        d = PiecewiseControl(smooth_direction(np.random.default_rng(seed), p.grid, p.m))
        assert directional_derivative(p, base, d, noise).mean == 0.0


def test_derivative_is_linear_in_direction():
    rng = np.random.default_rng(4)
    for p in stochastic_suite(40):
        noise = sample_brownian(p.grid, 500, 0)
        base = simulate(p, np.ones(p.n), PiecewiseControl(smooth_direction(rng, p.grid, p.m)), noise)
        d1, d2 = (smooth_direction(rng, p.grid, p.m) for _ in range(2))
        v1 = directional_derivative(p, base, PiecewiseControl(d1), noise).mean
        v2 = directional_derivative(p, base, PiecewiseControl(d2), noise).mean
        v12 = directional_derivative(p, base, PiecewiseControl(0.7 * d1 - 1.3 * d2), noise).mean
        assert abs(v12 - 0.7 * v1 + 1.3 * v2) <= 1e-10 * max(1.0, abs(v12))


def test_gradient_check_stochastic_and_deterministic():
    rng = np.random.default_rng(5)
    for p in stochastic_suite(40):
        noise = sample_brownian(p.grid, 2000, 0)
        base = PiecewiseControl(smooth_direction(rng, p.grid, p.m))
        d = PiecewiseControl(smooth_direction(rng, p.grid, p.m))
        rep = gradient_check(p, np.ones(p.n), base, d, noise)
        assert rep.rel_error <= 1e-2
    for _ in range(2):
        p = random_problem(rng, 40, deterministic=True)
        noise = sample_brownian(p.grid, 3, 0)
        base = PiecewiseControl(smooth_direction(rng, p.grid, p.m))
        d = PiecewiseControl(smooth_direction(rng, p.grid, p.m))
        assert gradient_check(p, np.ones(p.n), base, d, noise).rel_error <= 1e-6


def test_gradient_check_around_feedback_law():
    p = stochastic_suite(40)[1]
    _, _, law, noise, _ = _optimum(p, 2000)
    d = PiecewiseControl(smooth_direction(np.random.default_rng(6), p.grid, p.m))
    rep = gradient_check(p, np.ones(p.n), FeedbackControl(law), d, noise)
    assert rep.rel_error <= 1e-2
    assert set(rep.to_dict()) == {"adjoint_value", "fd_value", "rel_error", "adjoint_std_error", "fd_std_error"}


def test_derivative_vanishes_at_optimum():
    rng = np.random.default_rng(7)
    p = stochastic_suite(200)[0]
    _, _, _, noise, traj = _optimum(p, 4000)
    for _ in range(5):
        dd = directional_derivative(p, traj, PiecewiseControl(smooth_direction(rng, p.grid, p.m)), noise)
        assert abs(dd.mean) <= 3.0 * dd.std_error


def test_derivative_needs_matching_noise():
    p = stochastic_suite(20)[0]
    traj = simulate(p, [1.0], ZeroControl(), sample_brownian(p.grid, 5, 0))
    with pytest.raises(ValueError):
        directional_derivative(p, traj, ZeroControl(), sample_brownian(p.grid, 5, 1))


def test_pathwise_direction_accepted():
    p = stochastic_suite(20)[2]
    noise = sample_brownian(p.grid, 40, 0)
    d = smooth_direction(np.random.default_rng(8), p.grid, p.m)
    base = simulate(p, np.ones(p.n), ZeroControl(), noise)
    a = directional_derivative(p, base, PiecewiseControl(d), noise).mean
    b = directional_derivative(p, base, PathwiseControl(np.broadcast_to(d, (40, *d.shape))), noise).mean
    assert a == b


# --- decoupling and stationarity -----------------------------------------------


def test_zero_pair():
    spec = ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, 20), A=0.2, B=1.0, C=0.3, D=0.4, R=1.0)
    p = validate_problem(spec)
    ric, eta, _, _, traj = _optimum(p, 10)
    pair = decouple(p, ric, eta, traj)
    np.testing.assert_array_equal(pair.Y, 0.0)
    np.testing.assert_array_equal(pair.Z, 0.0)


def test_terminal_pair_value():
    for p in stochastic_suite(40):
        ric, eta, _, _, traj = _optimum(p, 50)
        Y = decouple(p, ric, eta, traj).Y
        np.testing.assert_allclose(Y[:, -1], traj.X[:, -1] @ p.G.T + p.g, atol=1e-10)


def test_tanh_pair_at_start():
    p = tanh_problem(1000)
    ric, eta, _, _, traj = _optimum(p, 2, x=np.array([2.0]))
    assert decouple(p, ric, eta, traj).Y[0, 0, 0] == pytest.approx(2.0 * np.tanh(1.0), abs=2e-6)


def test_tanh_residual_and_refinement():
    r1 = residual_for(tanh_problem(1000))
    r2 = residual_for(tanh_problem(500))
    assert r1 <= 1e-2
    assert abs(r2 / r1 - 2.0) <= 0.6


def test_residual_first_order_on_scalar_suite():
    from recursive_lq.problems import scalar_deterministic_suite

    for p, q in zip(scalar_deterministic_suite(400), scalar_deterministic_suite(800)):
        assert np.log2(residual_for(p) / residual_for(q)) >= 0.9


def test_residual_responds_to_control_perturbation():
    p = tanh_problem(1000)
    ric, eta, _, noise, traj = _optimum(p, 1)
    k = 400
    U = traj.U.copy()
    U[:, k] += 0.1
    bumped = simulate(p, [1.0], PathwiseControl(U), noise)
    base_res = stationarity_residual(p, traj, decouple(p, ric, eta, traj)).residuals
    res = stationarity_residual(p, bumped, decouple(p, ric, eta, bumped)).residuals
    # the interval-k control is held until node k+1, where the residual picks it up with slope R
    assert res[0, k + 1, 0] - base_res[0, k + 1, 0] == pytest.approx(0.1, abs=2e-3)


def test_all_zero_problem_has_zero_residual():
    spec = ProblemSpec.build(2, 1, TimeGrid(0.0, 1.0, 10), R=1.0)
    p = validate_problem(spec)
    ric, eta, _, _, traj = _optimum(p, 5, x=np.zeros(2))
    rep = stationarity_residual(p, traj, decouple(p, ric, eta, traj))
    assert rep.max == 0.0
    assert rep.l2.shape == (11,)
