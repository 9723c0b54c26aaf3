"""Stochastic LQ control with a recursive cost functional."""

from .affine_term import FeedbackLaw, solve_eta, synthesize_law
from .errors import (
    Blowup,
    DomainSuspect,
    HypothesisViolated,
    NonFinite,
    NotSymmetric,
    NumericalFailure,
    OutOfDomain,
    RecursiveLQError,
    RestrictionViolated,
    ShapeMismatch,
    SynthesisInvalid,
)
from .model import ProblemSpec, TimeGrid, ValidatedProblem, load_problem, save_problem, validate_problem
from .recursive_cost import estimate_cost, phi_weights
from .riccati import solve_riccati
from .simulate import (
    ConstantControl,
    FeedbackControl,
    PathwiseControl,
    PerturbedControl,
    PiecewiseControl,
    ZeroControl,
    sample_brownian,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Blowup",
    "ConstantControl",
    "DomainSuspect",
    "FeedbackControl",
    "FeedbackLaw",
    "HypothesisViolated",
    "NonFinite",
    "NotSymmetric",
    "NumericalFailure",
    "OutOfDomain",
    "PathwiseControl",
    "PerturbedControl",
    "PiecewiseControl",
    "ProblemSpec",
    "RecursiveLQError",
    "RestrictionViolated",
    "ShapeMismatch",
    "SynthesisInvalid",
    "TimeGrid",
    "ValidatedProblem",
    "ZeroControl",
    "estimate_cost",
    "load_problem",
    "phi_weights",
    "sample_brownian",
    "save_problem",
    "simulate",
    "solve_eta",
    "solve_riccati",
    "synthesize_law",
    "validate_problem",
]
