import numpy as np
import pytest

from recursive_lq.errors import RestrictionViolated
from recursive_lq.model import ProblemSpec, TimeGrid, validate_problem
from recursive_lq.oracle import classical_riccati_reference, discrete_stochastic_lqr, dp_deterministic, dp_solution
from recursive_lq.problems import (
    TANH_VALUE,
    classical_suite,
    deterministic_homogeneous_suite,
    random_problem,
    stochastic_suite,
    tanh_problem,
)
from recursive_lq.recursive_cost import estimate_cost, phi_weights
from recursive_lq.riccati import solve_riccati
from recursive_lq.simulate import ZeroControl, sample_brownian, simulate

from conftest import scalar


def test_tanh_dp_value():
    assert dp_deterministic(tanh_problem(1000), [1.0]) == pytest.approx(0.7616, abs=1e-3)


def test_dp_converges_to_riccati_value():
    gaps = [abs(dp_deterministic(tanh_problem(N), [1.0]) - TANH_VALUE) for N in (250, 500, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_zero_cost_dp():
    p = scalar(n_steps=20, A=0.5, B=1.0, R=1.0)
    sol = dp_solution(p)
    assert sol.value([3.0]) == 0.0
    np.testing.assert_array_equal(sol.gains, 0.0)
    np.testing.assert_array_equal(sol.offsets, 0.0)


@pytest.mark.parametrize("R", [1.0, 7.0])
def test_no_control_authority_is_plain_quadrature(R):
    spec = ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, 200), A=0.4, b=0.3, Q=1.0, q=0.2, R=R, G=2.0, g=0.5, E=0.6)
    p = validate_problem(spec)
    noise = sample_brownian(p.grid, 1, 0)
    direct = estimate_cost(p, simulate(p, [1.5], ZeroControl(), noise), phi_weights(p, noise)).mean
    assert dp_deterministic(p, [1.5]) == pytest.approx(direct, rel=1e-12)


def test_pipeline_agreement_on_homogeneous_suite():
    for p in deterministic_homogeneous_suite(1000):
        x = np.ones(p.n)
        dp = dp_deterministic(p, x)
        assert abs(x @ solve_riccati(p).P[0] @ x - dp) <= 1e-3 * (1.0 + abs(dp))


def test_stochastic_oracle_on_tanh():
    assert abs(discrete_stochastic_lqr(tanh_problem(1000)).P0[0, 0] - TANH_VALUE) <= 2e-3


def test_noise_free_oracles_coincide():
    p = random_problem(np.random.default_rng(2), 40, deterministic=True, classical=True)
    a, b = dp_solution(p), discrete_stochastic_lqr(p)
    np.testing.assert_allclose(a.K, b.K, atol=1e-12)
    np.testing.assert_allclose(a.k, b.k, atol=1e-12)


def test_state_noise_scalar_case():
    p = scalar(n_steps=2000, B=1.0, C=0.5, Q=1.0, R=1.0)
    assert abs(discrete_stochastic_lqr(p).P0[0, 0] - solve_riccati(p).P[0, 0, 0]) <= 5e-3


def test_gap_halves_with_grid():
    for p in classical_suite(400, count=2):
        fine = validate_problem(p.regrid(800))
        g1 = np.abs(discrete_stochastic_lqr(p).P0 - solve_riccati(p).P[0]).max()
        g2 = np.abs(discrete_stochastic_lqr(fine).P0 - solve_riccati(fine).P[0]).max()
        assert abs(g1 / g2 - 2.0) <= 0.6


def test_cost_field_is_filled_on_request():
    p = classical_suite(20, count=1)[0]
    x = np.ones(p.n)
    sol = discrete_stochastic_lqr(p, x)
    assert sol.cost == sol.value(x)


def test_restrictions():
    p = stochastic_suite(20)[0]
    with pytest.raises(RestrictionViolated):
        dp_solution(p)
    with pytest.raises(RestrictionViolated):
        discrete_stochastic_lqr(p)
    with pytest.raises(RestrictionViolated):
        classical_riccati_reference(p)


def test_reference_on_tanh():
    ref = classical_riccati_reference(tanh_problem(100))
    np.testing.assert_allclose(ref[:, 0, 0], np.tanh(1.0 - np.linspace(0, 1, 101)), atol=1e-11)
