"""
Optimal offloading policy with quadruplet memoization.

decide() strips excessive tasks, looks the reduced state up in the memo,
falls back to walking the most-imminent-removal chain for an adjacent
answer, and only then runs the DP. The structural helpers (adjacency,
classification by value differences, distance to the nearest
non-offloading state) are independent characterizations of the same
decision and are used to cross-check it.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence

from dp import BackwardInductionSolver, MemoStore, TopDownSolver, solver_for, tie_tolerance
from errors import InferenceUnavailableError, InvariantViolation
from model import ModelParams, SystemState, as_state, offload_vector
from reduction import to_reduced, truncate

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    DOWN = "down"  # towards the state with fewer imminent tasks
    UP = "up"


class PolicyDecision(NamedTuple):
    L_star: int
    s_after: SystemState


@dataclass(frozen=True)
class StateClass:
    """Offloading when the optimal decision is positive, non-offloading when it is 0."""

    L_star: int

    @property
    def is_offloading(self) -> bool:
        return self.L_star > 0

    @property
    def label(self) -> str:
        return "offloading" if self.is_offloading else "non-offloading"


NON_OFFLOADING = StateClass(0)


def infer_from_adjacent(L_known: int, direction: Direction, steps: int = 1) -> int:
    """
    Decision of a state ``steps`` links away along a most-imminent-removal chain.

    Args:
        L_known: Optimal decision of the state we start from
        direction: DOWN removes tasks, UP adds them back
        steps: Number of chain links

    Returns:
        The inferred optimal decision
    """
    if direction is Direction.DOWN:
        return max(L_known - steps, 0)
    if L_known < 1:
        raise InferenceUnavailableError(
            "cannot infer upwards from a non-offloading state; solve the DP instead"
        )
    return L_known + steps


def is_adjacent(s, s_a) -> bool:
    """True when s_a is s plus one task no later than s's most imminent deadline."""
    s, s_a = as_state(s), as_state(s_a)
    if len(s) != len(s_a):
        return False
    diff = [b - a for a, b in zip(s.counts, s_a.counts)]
    if min(diff) < 0 or sum(diff) != 1:
        return False
    j = diff.index(1) + 1
    d = s.most_imminent() or s.N
    return j <= d


@dataclass(frozen=True)
class SliceSpec:
    """Two free coordinates (1-based) and fixed values for the rest."""

    N: int
    x: int
    y: int
    x_values: Sequence[int]
    y_values: Sequence[int]
    fixed: Dict[int, int] = field(default_factory=dict)

    def state(self, n_x: int, n_y: int) -> SystemState:
        counts = [0] * self.N
        for index, value in self.fixed.items():
            counts[index - 1] = value
        counts[self.x - 1] = n_x
        counts[self.y - 1] = n_y
        return SystemState(tuple(counts))


class DecisionCell(NamedTuple):
    n_x: int
    n_y: int
    state: SystemState
    L_star: int
    label: str


class PolicyEngine:
    """
    Answers decisions from a shared write-once memo and solves the DP on a miss.

    By default a miss solves every lean key up to the horizon, after which the
    memo answers everything and the adjacency chain is never consulted. With
    ``lazy`` a miss solves only the queried key (top-down), so later keys at
    the same horizon are often answered by walking the chain instead.
    """

    def __init__(
        self,
        params: ModelParams,
        memo: Optional[MemoStore] = None,
        solver: Optional[BackwardInductionSolver] = None,
        lazy: bool = False,
    ):
        self.params = params
        if solver is None:
            solver = solver_for(params, memo if memo is not None else MemoStore())
        self.solver = solver
        self.memo = self.solver.memo
        self.lazy = lazy
        self._top_down = TopDownSolver(params, use_lean=True, memo=self.memo) if lazy else None
        self.dp_runs = 0
        self.chain_inferences = 0

    def _lookup(self, key: SystemState, horizon: int) -> Optional[int]:
        entry = self.memo.get(key, horizon)
        return None if entry is None else entry.decision

    def _infer_from_chain(self, key: SystemState, horizon: int) -> Optional[int]:
        state, steps = key, 0
        while not state.is_empty:
            state = offload_vector(state, 1)
            steps += 1
            known = self._lookup(state, horizon)
            if known is None:
                continue
            if known >= 1:
                self.chain_inferences += 1
                return infer_from_adjacent(known, Direction.UP, steps)
            return None
        return None

    def decide(self, s, horizon: int) -> PolicyDecision:
        """
        Optimal number of most-imminent tasks to offload now.

        Args:
            s: Current state
            horizon: Remaining slots, at least 1

        Returns:
            (L*, state after offloading)
        """
        s = as_state(s)
        if horizon < 1:
            raise ValueError(f"decide needs horizon >= 1 (got {horizon})")
        reduced, L_g = to_reduced(s, horizon)
        key = truncate(reduced, horizon)
        L_r = self._lookup(key, horizon)
        if L_r is None:
            L_r = self._infer_from_chain(key, horizon)
        if L_r is None:
            self.dp_runs += 1
            if self._top_down is not None:
                self._top_down.value(key, horizon)
            else:
                self.solver.solve_through(horizon)
            L_r = self._lookup(key, horizon)
            if L_r is None:
                raise InvariantViolation(f"solver left no entry for {key} at horizon {horizon}")
        L_star = L_g + L_r
        return PolicyDecision(L_star, offload_vector(s, L_star))

    def _value_gap(self, s_a: SystemState, horizon: int) -> float:
        s = offload_vector(s_a, 1)
        return self.solver.value(s_a, horizon) - self.solver.value(s, horizon)

    def is_non_offloading(self, s_a, horizon: int) -> bool:
        """J(s_a) - J(s_a minus its most imminent task) < C_o."""
        s_a = as_state(s_a)
        if s_a.is_empty:
            return True
        gap = self._value_gap(s_a, horizon)
        return gap < self.params.C_o - tie_tolerance(gap)

    def classify(self, s_a, horizon: int) -> StateClass:
        s_a = as_state(s_a)
        if self.is_non_offloading(s_a, horizon):
            return NON_OFFLOADING
        L_star = self.solver.optimal_decision(s_a, horizon)
        if L_star == 0:
            raise InvariantViolation(
                f"{s_a} classified as offloading by value gap but its argmin decision is 0"
            )
        return StateClass(L_star)

    def smallest_nonoffloading_distance(self, s, horizon: int) -> int:
        s = as_state(s)
        for L in range(0, s.total + 1):
            if self.is_non_offloading(offload_vector(s, L), horizon):
                return L
        return s.total

    def decision_map(self, spec: SliceSpec, horizon: int) -> List[DecisionCell]:
        """Grid of decisions over a two-coordinate slice, x-major order."""
        cells = []
        for n_x in spec.x_values:
            for n_y in spec.y_values:
                state = spec.state(n_x, n_y)
                L_star = self.decide(state, horizon).L_star
                cells.append(DecisionCell(n_x, n_y, state, L_star, StateClass(L_star).label))
        return cells

    def stats(self) -> Dict[str, int]:
        stats = self.memo.stats()
        stats.update({"dp_runs": self.dp_runs, "chain_inferences": self.chain_inferences})
        return stats


def decide(s, horizon: int, engine: PolicyEngine) -> PolicyDecision:
    return engine.decide(s, horizon)


def classify(s_a, horizon: int, engine: PolicyEngine) -> StateClass:
    return engine.classify(s_a, horizon)


def smallest_nonoffloading_distance(s, horizon: int, engine: PolicyEngine) -> int:
    return engine.smallest_nonoffloading_distance(s, horizon)


def decision_map(spec: SliceSpec, horizon: int, engine: PolicyEngine) -> List[DecisionCell]:
    return engine.decision_map(spec, horizon)
