import numpy as np
import pytest

from recursive_lq.model import ProblemSpec, TimeGrid, validate_problem


def scalar(n_steps=100, T=1.0, **coeffs):
    """Validated 1x1 problem with constant coefficients."""
    return validate_problem(ProblemSpec.build(1, 1, TimeGrid(0.0, T, n_steps), **coeffs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
