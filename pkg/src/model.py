"""
System model for the deadline-bucket offloading queue.

A slot runs five events in a fixed order: AMA arrival and offloading,
deadline shifting (expiries), task arrival, then local processing.
Deadlines are 1-based on the public surface: ``state.n(1)`` is the number of
tasks that expire at the end of this slot unless served.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

from errors import (
    InvalidArrivalError,
    InvalidDecisionError,
    InvalidParamsError,
    InvalidStateError,
)

PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SystemState:
    """Queued task counts per residual deadline, (n_1, ..., n_N)."""

    counts: Tuple[int, ...]
    total: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        counts = tuple(self.counts)
        if len(counts) < 1:
            raise InvalidStateError("state must have at least one deadline bucket")
        for value in counts:
            if isinstance(value, bool) or int(value) != value:
                raise InvalidStateError(f"task counts must be integers, got {counts!r}")
            if value < 0:
                raise InvalidStateError(f"task counts must be non-negative, got {counts!r}")
        counts = tuple(int(v) for v in counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", sum(counts))

    @classmethod
    def of(cls, values: Iterable[int]) -> "SystemState":
        return cls(tuple(values))

    @classmethod
    def empty(cls, N: int) -> "SystemState":
        return cls((0,) * N)

    @property
    def N(self) -> int:
        return len(self.counts)

    @property
    def is_empty(self) -> bool:
        return self.total == 0

    def n(self, i: int) -> int:
        """Count of tasks with residual deadline ``i`` (1-based)."""
        return self.counts[i - 1]

    def most_imminent(self) -> int:
        """Smallest deadline holding a task, or 0 for the empty state."""
        for i, value in enumerate(self.counts, 1):
            if value:
                return i
        return 0

    def __iter__(self):
        return iter(self.counts)

    def __len__(self):
        return len(self.counts)

    def __str__(self):
        return "(" + ",".join(str(v) for v in self.counts) + ")"


@dataclass(frozen=True)
class ModelParams:
    """
    Stochastic and cost parameters of the system.

    Args:
        N: Largest task deadline, in slots
        T: Horizon, in slots
        p_a: Probability that the AMA is present in a slot
        mu: Probability that the base station can process one task in a slot
        arrival: Arrival probabilities (p_0, ..., p_N); p_0 means no arrival
        C_o: Cost of offloading one task
        C_p: Penalty for one expired task
    """

    N: int
    T: int
    p_a: float
    mu: float
    arrival: Tuple[float, ...]
    C_o: float
    C_p: float

    def __post_init__(self):
        object.__setattr__(self, "arrival", tuple(float(p) for p in self.arrival))
        problems = []
        if self.N < 1:
            problems.append(f"N must be >= 1 (got {self.N})")
        if self.T < 1:
            problems.append(f"T must be >= 1 (got {self.T})")
        for name in ("p_a", "mu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                problems.append(f"{name} must lie in [0, 1] (got {value})")
        if len(self.arrival) != self.N + 1:
            problems.append(
                f"arrival must have N+1 = {self.N + 1} entries (got {len(self.arrival)})"
            )
        if any(not 0.0 <= p <= 1.0 for p in self.arrival):
            problems.append("every arrival probability must lie in [0, 1]")
        elif abs(math.fsum(self.arrival) - 1.0) > PROBABILITY_TOLERANCE:
            total = math.fsum(self.arrival)
            problems.append(f"arrival probabilities must sum to 1 (got {total!r})")
        if not self.C_o > 0:
            problems.append(f"C_o must be positive (got {self.C_o})")
        if not self.C_p > self.C_o:
            problems.append(f"model assumes C_p > C_o (got C_p={self.C_p}, C_o={self.C_o})")
        if problems:
            raise InvalidParamsError("; ".join(problems))

    @classmethod
    def with_uniform_arrival(
        cls, N: int, T: int, p_a: float, mu: float, p0: float, C_o: float, C_p: float
    ) -> "ModelParams":
        """Build params where every deadline is equally likely: p_i = (1 - p0) / N."""
        p_i = (1.0 - p0) / N
        return cls(N=N, T=T, p_a=p_a, mu=mu, arrival=(p0,) + (p_i,) * N, C_o=C_o, C_p=C_p)

    @property
    def q(self) -> float:
        """Probability that the AMA is absent in a slot."""
        return 1.0 - self.p_a

    def replace(self, **changes) -> "ModelParams":
        values = {
            "N": self.N,
            "T": self.T,
            "p_a": self.p_a,
            "mu": self.mu,
            "arrival": self.arrival,
            "C_o": self.C_o,
            "C_p": self.C_p,
        }
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True)
class OffloadDecision:
    """Number of most-imminent tasks sent to the AMA."""

    L: int

    def __post_init__(self):
        if self.L < 0:
            raise InvalidDecisionError(f"offloading decision must be non-negative (got {self.L})")

    def check(self, state: SystemState) -> int:
        if self.L > state.total:
            raise InvalidDecisionError(
                f"cannot offload {self.L} tasks from {state} holding {state.total}"
            )
        return self.L


@dataclass(frozen=True)
class SlotOutcome:
    """Random events of one slot; arrival_deadline 0 means no arrival."""

    ama_present: bool
    arrival_deadline: int
    local_service: bool

    def __post_init__(self):
        if self.arrival_deadline < 0:
            raise InvalidArrivalError(f"arrival deadline must be >= 0, got {self.arrival_deadline}")


def _as_count(L) -> int:
    return L.L if isinstance(L, OffloadDecision) else int(L)


def offload_vector(s: SystemState, L) -> SystemState:
    """Remove the ``L`` most imminent tasks from ``s``."""
    remaining = _as_count(L)
    if remaining < 0 or remaining > s.total:
        raise InvalidDecisionError(f"cannot offload {remaining} tasks from {s} holding {s.total}")
    counts = list(s.counts)
    for i, value in enumerate(counts):
        if remaining == 0:
            break
        taken = min(value, remaining)
        counts[i] = value - taken
        remaining -= taken
    return SystemState(tuple(counts))


def shift(s: SystemState) -> Tuple[SystemState, int]:
    """Advance deadlines by one slot; returns the new state and the expired count."""
    return SystemState(s.counts[1:] + (0,)), s.counts[0]


def add_arrival(s: SystemState, k: int) -> SystemState:
    if k < 0 or k > s.N:
        raise InvalidArrivalError(f"arrival deadline {k} outside 0..{s.N}")
    if k == 0:
        return s
    counts = list(s.counts)
    counts[k - 1] += 1
    return SystemState(tuple(counts))


def local_process(s: SystemState) -> SystemState:
    """Serve one task at the most imminent deadline; empty states are left alone."""
    d = s.most_imminent()
    if d == 0:
        return s
    counts = list(s.counts)
    counts[d - 1] -= 1
    return SystemState(tuple(counts))


def next_state(s: SystemState, L, k: int, local: bool) -> SystemState:
    """Compose offload, shift, arrival and (optionally) local processing."""
    state = offload_vector(s, L)
    state, _ = shift(state)
    state = add_arrival(state, k)
    if local:
        state = local_process(state)
    return state


def cost_with_ama(s: SystemState, L, params: ModelParams) -> float:
    count = _as_count(L)
    if count < 0 or count > s.total:
        raise InvalidDecisionError(f"cannot offload {count} tasks from {s} holding {s.total}")
    return params.C_o * count + params.C_p * max(s.counts[0] - count, 0)


def cost_without_ama(s: SystemState, params: ModelParams) -> float:
    return params.C_p * s.counts[0]


def expected_instant_cost(s: SystemState, L, params: ModelParams) -> float:
    return params.p_a * cost_with_ama(s, L, params) + (1.0 - params.p_a) * cost_without_ama(
        s, params
    )


def as_state(values: Sequence[int]) -> SystemState:
    """Accept either a SystemState or a plain sequence of counts."""
    if isinstance(values, SystemState):
        return values
    return SystemState(tuple(values))
