import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recursive_lq.errors import DomainSuspect
from recursive_lq.model import ProblemSpec, TimeGrid, validate_problem
from recursive_lq.problems import classical_suite, smooth_direction, stochastic_suite, unit_running_cost_problem
from recursive_lq.recursive_cost import (
    CostEstimate,
    estimate_cost,
    paired_difference,
    path_values,
    phi_weights,
    running_cost,
    summarize,
    terminal_cost,
)
from recursive_lq.simulate import PiecewiseControl, ZeroControl, sample_brownian, simulate

from conftest import scalar


# --- weights ------------------------------------------------------------------


def test_unit_weights_without_recursion():
    p = scalar(n_steps=30, Q=1.0, R=1.0)
    np.testing.assert_array_equal(phi_weights(p, sample_brownian(p.grid, 20, 0)).phi, 1.0)


def test_pure_discount_weight():
    p = scalar(n_steps=30, Q=1.0, R=1.0, E=1.0)
    phi = phi_weights(p, sample_brownian(p.grid, 20, 0)).phi
    np.testing.assert_allclose(phi[:, -1], np.e, rtol=1e-14)
    np.testing.assert_array_equal(phi[:, 0], 1.0)


def test_exponential_martingale_mean():
    p = scalar(n_steps=10, R=1.0, F=1.0)
    end = phi_weights(p, sample_brownian(p.grid, 100_000, 0)).phi[:, -1]
    assert abs(end.mean() - 1.0) <= 3.0 * end.std(ddof=1) / np.sqrt(end.size)


def test_weights_need_matching_grid():
    p = scalar(n_steps=10, R=1.0)
    with pytest.raises(ValueError):
        phi_weights(p, sample_brownian(TimeGrid(0.0, 1.0, 11), 3, 0))


# --- cost pieces --------------------------------------------------------------


def test_running_cost_examples():
    p = scalar(Q=1.0, R=1.0)
    assert running_cost(p, [0.0], [0.0], 0.3) == 0.0
    assert running_cost(p, [2.0], [3.0], 0.3) == pytest.approx(13.0)
    q = scalar(Q=1.0, S=1.0, R=2.0, q=1.0, r=-1.0)
    assert running_cost(q, [1.0], [1.0], 0.3) == pytest.approx(5.0)


def test_terminal_cost_examples():
    p = scalar(R=1.0, G=1.0)
    assert terminal_cost(p, [0.0]) == 0.0
    assert terminal_cost(p, [3.0]) == pytest.approx(9.0)
    spec = ProblemSpec.build(2, 1, TimeGrid(0.0, 1.0, 4), R=1.0, G=np.diag([1.0, 2.0]), g=[1.0, 0.0])
    assert terminal_cost(validate_problem(spec), [1.0, 1.0]) == pytest.approx(5.0)


# --- estimator ----------------------------------------------------------------


def test_zero_cost_estimate():
    spec = ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, 20), A=0.3, B=1.0, C=0.5, sigma=0.2, F=0.4)
    p = validate_problem(spec, allow_psd_R=True)
    noise = sample_brownian(p.grid, 50, 0)
    est = estimate_cost(p, simulate(p, [1.0], PiecewiseControl(np.ones((20, 1))), noise), phi_weights(p, noise))
    assert est.mean == 0.0 and est.std_error == 0.0


@pytest.mark.parametrize("E, expected", [(0.0, 1.0), (1.0, np.e - 1.0)])
def test_unit_running_cost(E, expected):
    p = unit_running_cost_problem(1000, E=E)
    noise = sample_brownian(p.grid, 2, 0)
    est = estimate_cost(p, simulate(p, [1.0], ZeroControl(), noise), phi_weights(p, noise))
    assert abs(est.mean - expected) <= 1e-3


def test_left_point_quadrature_converges_at_first_order():
    errs = []
    for N in (100, 200):
        p = unit_running_cost_problem(N, E=1.0)
        noise = sample_brownian(p.grid, 2, 0)
        errs.append(abs(estimate_cost(p, simulate(p, [1.0], ZeroControl(), noise), phi_weights(p, noise)).mean - (np.e - 1)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_classical_reduction_is_plain_average():
    p = classical_suite(40, count=1)[0]
    noise = sample_brownian(p.grid, 200, 0)
    phi = phi_weights(p, noise)
    np.testing.assert_array_equal(phi.phi, 1.0)
    traj = simulate(p, np.ones(p.n), PiecewiseControl(smooth_direction(np.random.default_rng(0), p.grid, p.m)), noise)
    vals = path_values(p, traj, phi.phi)
    h = p.grid.h
    manual = np.array([
        terminal_cost(p, traj.X[j, -1]) + h * sum(running_cost(p, traj.X[j, i], traj.U[j, i], p.grid.nodes[i]) for i in range(40))
        for j in range(5)
    ])
    np.testing.assert_allclose(vals[:5], manual, rtol=1e-13)


def test_estimate_requires_common_noise():
    p = stochastic_suite(20)[0]
    a, b = sample_brownian(p.grid, 10, 0), sample_brownian(p.grid, 10, 1)
    with pytest.raises(ValueError):
        estimate_cost(p, simulate(p, [1.0], ZeroControl(), a), phi_weights(p, b))


def test_convexity_on_common_noise():
    rng = np.random.default_rng(12)
    for p in stochastic_suite(40)[:3]:
        noise = sample_brownian(p.grid, 4000, 0)
        phi = phi_weights(p, noise)
        x = np.ones(p.n)
        u1, u2 = (smooth_direction(rng, p.grid, p.m) for _ in range(2))
        J1 = estimate_cost(p, simulate(p, x, PiecewiseControl(u1), noise), phi)
        J2 = estimate_cost(p, simulate(p, x, PiecewiseControl(u2), noise), phi)
        for a in (0.25, 0.5, 0.75):
            Ja = estimate_cost(p, simulate(p, x, PiecewiseControl(a * u1 + (1 - a) * u2), noise), phi)
            chord = CostEstimate(0.0, 0.0, 4000, values=a * J1.values + (1 - a) * J2.values)
            gap, se = paired_difference(chord, Ja)
            assert gap >= -3.0 * se


def test_quadratic_expansion_in_epsilon():
    rng = np.random.default_rng(13)
    p = stochastic_suite(40)[2]
    noise = sample_brownian(p.grid, 4000, 0)
    phi = phi_weights(p, noise)
    x = np.ones(p.n)
    u, d = smooth_direction(rng, p.grid, p.m), smooth_direction(rng, p.grid, p.m)
    eps = np.linspace(-1.0, 1.0, 7)
    vals = np.array([estimate_cost(p, simulate(p, x, PiecewiseControl(u + e * d), noise), phi).values for e in eps])
    # per path the cost is an exact quadratic in epsilon, so a cubic term must vanish
    coef = np.polynomial.polynomial.polyfit(eps, vals, 3)
    assert np.abs(coef[3]).max() <= 1e-8 * np.abs(vals).max()
    a2 = coef[2]
    assert a2.mean() >= -3.0 * a2.std(ddof=1) / np.sqrt(a2.size)
    fit = np.polynomial.polynomial.polyval(eps, coef[:3]).T
    resid = np.abs(fit - vals).max()
    assert resid <= 1e-8 * np.abs(vals).max()


# --- domain heuristics and pairing --------------------------------------------


def test_summarize_rejects_many_nonfinite():
    v = np.ones(1000)
    v[:5] = np.inf
    with pytest.raises(DomainSuspect):
        summarize(v)
    est = summarize(v, check_domain=False)
    assert est.rejected == 5 and est.mean == 1.0


def test_summarize_tolerates_rare_nonfinite():
    v = np.ones(10_000)
    v[3] = np.nan
    assert summarize(v).rejected == 1


def test_summarize_flags_unstable_mean():
    v = np.concatenate([np.zeros(500), np.ones(500)]) + np.random.default_rng(0).normal(0, 1e-3, 1000)
    with pytest.raises(DomainSuspect, match="unstable"):
        summarize(v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_paired_difference_matches_direct(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    m, se = paired_difference(summarize(a, False), summarize(b, False))
    assert m == pytest.approx((a - b).mean())
    assert se == pytest.approx((a - b).std(ddof=1) / np.sqrt(50))
    with pytest.raises(ValueError):
        paired_difference(CostEstimate(0, 0, 1), summarize(b, False))


def test_to_dict_keys():
    assert set(summarize(np.ones(3)).to_dict()) == {"mean", "std_error", "n_paths", "rejected_paths"}
