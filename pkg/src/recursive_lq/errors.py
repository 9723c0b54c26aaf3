"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RecursiveLQError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(RecursiveLQError, ValueError):
    pass


class OutOfDomain(RecursiveLQError, ValueError):
    pass


class HypothesisViolated(RecursiveLQError):
    """A standing hypothesis (H3/H4) fails at some grid node."""

    def __init__(self, hypothesis: str, node: int | None, message: str):
        self.hypothesis = hypothesis
        self.node = node
        where = "" if node is None else f" at node {node}"
        super().__init__(f"{hypothesis} violated{where}: {message}")


class NotSymmetric(RecursiveLQError, ValueError):
    pass


class NumericalFailure(RecursiveLQError):
    """Base for failures that map to CLI exit code 2."""


class Blowup(NumericalFailure):
    def __init__(self, s: float, magnitude: float):
        self.s = s
        self.magnitude = magnitude
        super().__init__(f"solution escaped at s={s:.6g} (max |entry| = {magnitude:.3g})")


class NonFinite(NumericalFailure):
    pass


class SynthesisInvalid(RecursiveLQError):
    pass


class DomainSuspect(RecursiveLQError):
    """Monte Carlo cost looks ill-defined: control may lie outside the effective domain."""


class RestrictionViolated(RecursiveLQError, ValueError):
    pass
