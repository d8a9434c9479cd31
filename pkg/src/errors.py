"""
Exception hierarchy for the offloading toolkit.

Input problems subclass ValueError so callers can catch them generically;
InvariantViolation signals a bug in the solver itself.
"""

from dataclasses import dataclass
from typing import List


class OffloadError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidStateError(OffloadError, ValueError):
    """A deadline-bucket vector is malformed (wrong length, negative counts)."""


class InvalidParamsError(OffloadError, ValueError):
    """Model parameters violate their invariants."""


class InvalidDecisionError(OffloadError, ValueError):
    """An offloading decision L lies outside {0, ..., total tasks}."""


class InvalidArrivalError(OffloadError, ValueError):
    """An arrival deadline k lies outside {0, ..., N}."""


class DomainError(OffloadError, ValueError):
    """L lies outside the convex domain of the F-function."""


class InvalidPairError(OffloadError, ValueError):
    """A (state, lean state) pair is not componentwise ordered."""


class RangeError(OffloadError, ValueError):
    """An enumeration was requested outside its supported range."""


class InferenceUnavailableError(OffloadError):
    """Upward adjacency inference was requested from a zero decision."""


class OracleCapExceededError(OffloadError):
    """The brute-force oracle was asked to expand beyond its caps."""


class PolicyContractError(OffloadError):
    """A simulated policy returned a decision outside the feasible set."""


class InvariantViolation(OffloadError):
    """An internal consistency check failed."""


@dataclass(frozen=True)
class Violation:
    """One schema problem, located by its dotted field path."""

    path: str
    message: str

    def to_dict(self) -> dict:
        return {"path": self.path, "message": self.message}


class ConfigError(OffloadError, ValueError):
    """An experiment config failed validation; carries every violation found."""

    def __init__(self, violations: List[Violation]):
        self.violations = list(violations)
        summary = "; ".join(f"{v.path}: {v.message}" for v in self.violations)
        super().__init__(f"invalid config ({len(self.violations)} violation(s)): {summary}")
