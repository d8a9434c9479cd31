"""
Finite-horizon dynamic program for the offloading queue.

J_h(s) = p_a * min_L Q_h(s, L) + (1 - p_a) * Q_h(s, 0), with
Q_h(s, L) = C_o L + C_p max(n_1 - L, 0) + sum_k p_k [mu J_{h-1}(s'_Lk) + (1 - mu) J_{h-1}(s''_Lk)].

Values are never stored for generic states. Every state is mapped to its
canonical key (lean state, truncated to the horizon) and the lean correction
is added back, so each level of the table holds at most N! entries.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DomainError, InvalidDecisionError, InvariantViolation
from model import ModelParams, SystemState, as_state, cost_with_ama, next_state, offload_vector
from reduction import canonical_key, enumerate_lean

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9
_ATTACH_LOCK = threading.Lock()


def tie_tolerance(best: float) -> float:
    return TIE_TOLERANCE * max(1.0, abs(best))


def largest_minimizer(q_values: Sequence[Tuple[int, float]]) -> Tuple[float, int]:
    """Minimum of (L, Q) pairs and the largest L within tolerance of it."""
    best = min(q for _, q in q_values)
    bound = best + tie_tolerance(best)
    return best, max(L for L, q in q_values if q <= bound)


def slot_events(params: ModelParams) -> List[Tuple[int, bool, float]]:
    """(arrival deadline, local service, probability) for every branch with positive weight."""
    events = []
    for k, p_k in enumerate(params.arrival):
        for local, p_local in ((True, params.mu), (False, 1.0 - params.mu)):
            weight = p_k * p_local
            if weight > 0.0:
                events.append((k, local, weight))
    return events


@dataclass(frozen=True)
class MemoEntry:
    """One stored quadruplet: key state, remaining horizon, optimal cost, optimal decision."""

    state: SystemState
    horizon: int
    value: float
    decision: int


class MemoStore:
    """
    Write-once map from (canonical state, remaining horizon) to a MemoEntry.

    Safe for concurrent callers: inserts are insert-if-absent under a lock, and
    a second write of a different value raises InvariantViolation.
    """

    def __init__(self):
        self._entries: Dict[Tuple[SystemState, int], MemoEntry] = {}
        self._lock = threading.Lock()
        self.params: Optional[ModelParams] = None
        self.solver: Optional["BackwardInductionSolver"] = None
        self.hits = 0
        self.misses = 0
        self.inserts = 0

    def bind(self, params: ModelParams) -> None:
        with self._lock:
            if self.params is None:
                self.params = params
            elif self.params != params:
                raise InvariantViolation("memo store is already bound to different parameters")

    def get(self, state: SystemState, horizon: int) -> Optional[MemoEntry]:
        with self._lock:
            entry = self._entries.get((state, horizon))
            if entry is None:
                self.misses += 1
            else:
                self.hits += 1
            return entry

    def put(self, entry: MemoEntry) -> MemoEntry:
        key = (entry.state, entry.horizon)
        with self._lock:
            existing = self._entries.get(key)
            if existing is None:
                self._entries[key] = entry
                self.inserts += 1
                return entry
        drift = abs(existing.value - entry.value)
        if existing.decision != entry.decision or drift > tie_tolerance(existing.value):
            raise InvariantViolation(
                f"conflicting memo entries for {entry.state} at horizon {entry.horizon}: "
                f"{existing} vs {entry}"
            )
        return existing

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def count_at(self, horizon: int) -> int:
        with self._lock:
            return sum(1 for (_, h) in self._entries if h == horizon)

    def stats(self) -> Dict[str, int]:
        return {
            "entries": len(self),
            "hits": self.hits,
            "misses": self.misses,
            "inserts": self.inserts,
        }


@dataclass
class LevelTable:
    keys: List[SystemState]
    index: Dict[SystemState, int]
    values: np.ndarray
    decisions: np.ndarray


@dataclass
class LevelPlan:
    """Flattened (key, L) pairs and their weighted successor edges for one level type."""

    pair_L: np.ndarray
    starts: np.ndarray
    sizes: np.ndarray
    const: np.ndarray
    edge_pair: np.ndarray
    edge_succ: np.ndarray
    edge_weight: np.ndarray


class BackwardInductionSolver:
    """
    Solves levels h = 1, 2, ... over the finite key space, one numpy pass per level.

    Level plans depend on h only through min(h, N + 1), so they are built once
    per type and reused; from level N + 1 on the plan is stationary.
    """

    def __init__(self, params: ModelParams, memo: Optional[MemoStore] = None):
        self.params = params
        self.memo = memo if memo is not None else MemoStore()
        self.memo.bind(params)
        self._events = slot_events(params)
        self._keys: Dict[int, List[SystemState]] = {}
        self._indices: Dict[int, Dict[SystemState, int]] = {}
        self._plans: Dict[int, LevelPlan] = {}
        self._canonical: Dict[Tuple[SystemState, int], Tuple[SystemState, float]] = {}
        self._lock = threading.RLock()
        zero = SystemState.empty(params.N)
        self._levels: List[LevelTable] = [
            LevelTable([zero], {zero: 0}, np.zeros(1), np.zeros(1, dtype=np.int64))
        ]

    @property
    def solved_horizon(self) -> int:
        return len(self._levels) - 1

    def _span(self, horizon: int) -> int:
        return min(self.params.N, horizon)

    def keys_for(self, horizon: int) -> List[SystemState]:
        span = self._span(horizon)
        if span not in self._keys:
            keys = enumerate_lean(self.params.N, span)
            self._keys[span] = keys
            self._indices[span] = {key: i for i, key in enumerate(keys)}
        return self._keys[span]

    def _index_for(self, horizon: int) -> Dict[SystemState, int]:
        self.keys_for(horizon)
        return self._indices[self._span(horizon)]

    def canonical(self, s: SystemState, horizon: int) -> Tuple[SystemState, float]:
        cache_key = (s, self._span(horizon))
        cached = self._canonical.get(cache_key)
        if cached is None:
            cached = canonical_key(s, horizon, self.params)
            self._canonical[cache_key] = cached
        return cached

    def _build_plan(self, horizon: int) -> LevelPlan:
        keys = self.keys_for(horizon)
        successor_index = self._index_for(horizon - 1)
        pair_L, starts, sizes, const = [], [], [], []
        edge_pair, edge_succ, edge_weight = [], [], []
        for key in keys:
            if key.counts[0] != 0:
                raise InvariantViolation(f"memo key {key} holds deadline-1 tasks")
            starts.append(len(pair_L))
            sizes.append(key.total + 1)
            for L in range(0, key.total + 1):
                pair = len(pair_L)
                pair_L.append(L)
                base = cost_with_ama(key, L, self.params)
                for k, local, weight in self._events:
                    successor = next_state(key, L, k, local)
                    succ_key, correction = self.canonical(successor, horizon - 1)
                    idx = successor_index.get(succ_key)
                    if idx is None:
                        raise InvariantViolation(
                            f"successor key {succ_key} missing from level {horizon - 1}"
                        )
                    base += weight * correction
                    edge_pair.append(pair)
                    edge_succ.append(idx)
                    edge_weight.append(weight)
                const.append(base)
        logger.debug(
            "built level plan for horizon type %d: %d keys, %d pairs, %d edges",
            self._level_type(horizon),
            len(keys),
            len(pair_L),
            len(edge_pair),
        )
        return LevelPlan(
            pair_L=np.asarray(pair_L, dtype=np.int64),
            starts=np.asarray(starts, dtype=np.int64),
            sizes=np.asarray(sizes, dtype=np.int64),
            const=np.asarray(const, dtype=float),
            edge_pair=np.asarray(edge_pair, dtype=np.int64),
            edge_succ=np.asarray(edge_succ, dtype=np.int64),
            edge_weight=np.asarray(edge_weight, dtype=float),
        )

    def _level_type(self, horizon: int) -> int:
        return min(horizon, self.params.N + 1)

    def _plan_for(self, horizon: int) -> LevelPlan:
        level_type = self._level_type(horizon)
        if level_type not in self._plans:
            self._plans[level_type] = self._build_plan(horizon)
        return self._plans[level_type]

    def _solve_level(self, horizon: int) -> LevelTable:
        plan = self._plan_for(horizon)
        previous = self._levels[horizon - 1].values
        expected = np.bincount(
            plan.edge_pair,
            weights=plan.edge_weight * previous[plan.edge_succ],
            minlength=len(plan.pair_L),
        )
        q = plan.const + expected
        best = np.minimum.reduceat(q, plan.starts)
        bound = best + TIE_TOLERANCE * np.maximum(1.0, np.abs(best))
        within = q <= np.repeat(bound, plan.sizes)
        decisions = np.maximum.reduceat(np.where(within, plan.pair_L, -1), plan.starts)
        values = self.params.p_a * best + (1.0 - self.params.p_a) * q[plan.starts]
        keys = self.keys_for(horizon)
        return LevelTable(keys, self._index_for(horizon), values, decisions)

    def solve_through(self, horizon: int) -> None:
        """Extend the table up to ``horizon`` and store a quadruplet per key and level."""
        with self._lock:
            start = len(self._levels)
            if horizon < start:
                return
            for h in range(start, horizon + 1):
                table = self._solve_level(h)
                self._levels.append(table)
                for key, value, decision in zip(table.keys, table.values, table.decisions):
                    self.memo.put(MemoEntry(key, h, float(value), int(decision)))
            logger.info(
                "backward induction solved horizons %d..%d (%d keys per stationary level)",
                start,
                horizon,
                len(self.keys_for(horizon)),
            )

    def level(self, horizon: int) -> LevelTable:
        self.solve_through(horizon)
        return self._levels[horizon]

    def value(self, s, horizon: int) -> float:
        s = as_state(s)
        if horizon <= 0:
            return 0.0
        table = self.level(horizon)
        key, correction = self.canonical(s, horizon)
        return float(table.values[table.index[key]]) + correction

    def value_with_ama(self, s, L: int, horizon: int) -> float:
        s = as_state(s)
        if L < 0 or L > s.total:
            raise InvalidDecisionError(f"cannot offload {L} tasks from {s} holding {s.total}")
        if horizon < 1:
            raise ValueError(f"value_with_ama needs horizon >= 1 (got {horizon})")
        self.solve_through(horizon - 1)
        expected = 0.0
        for k, local, weight in self._events:
            expected += weight * self.value(next_state(s, L, k, local), horizon - 1)
        return cost_with_ama(s, L, self.params) + expected

    def value_without_ama(self, s, horizon: int) -> float:
        # No AMA means L = 0 and the instant cost is C_p n_1, which is Q(s, 0).
        return self.value_with_ama(s, 0, horizon)

    def q_values(self, s, horizon: int) -> List[Tuple[int, float]]:
        """Q(s, L) for every L with n_1 <= L <= total."""
        s = as_state(s)
        return [(L, self.value_with_ama(s, L, horizon)) for L in range(s.counts[0], s.total + 1)]

    def f_domain(self, s) -> range:
        s = as_state(s)
        return range(s.counts[0], s.total + 1)

    def f_function(self, s, L: int, horizon: int) -> float:
        s = as_state(s)
        if L not in self.f_domain(s):
            raise DomainError(f"L={L} outside the F domain {s.counts[0]}..{s.total} of {s}")
        return self.value_without_ama(offload_vector(s, L), horizon) + L * self.params.C_o

    def optimal_decision(self, s, horizon: int) -> int:
        s = as_state(s)
        if horizon < 1:
            raise ValueError(f"optimal_decision needs horizon >= 1 (got {horizon})")
        key, correction = self.canonical(s, horizon)
        if key == s and correction == 0.0:
            table = self.level(horizon)
            return int(table.decisions[table.index[key]])
        _, decision = largest_minimizer(self.q_values(s, horizon))
        return decision


class TopDownSolver:
    """
    Memoized recursion from the queried state downward.

    With ``use_lean`` every state is replaced by its canonical key before the
    memo lookup; without it the memo is keyed on the raw state, with no
    reduction of any kind, which is exact but only tractable for small instances.
    """

    def __init__(
        self, params: ModelParams, use_lean: bool = True, memo: Optional[MemoStore] = None
    ):
        self.params = params
        self.use_lean = use_lean
        self.memo = memo if memo is not None else MemoStore()
        self.memo.bind(params)
        self._events = slot_events(params)

    def _key(self, s: SystemState, horizon: int) -> Tuple[SystemState, float]:
        if self.use_lean:
            return canonical_key(s, horizon, self.params)
        return s, 0.0

    def value(self, s, horizon: int) -> float:
        s = as_state(s)
        if horizon <= 0:
            return 0.0
        key, correction = self._key(s, horizon)
        entry = self.memo.get(key, horizon)
        if entry is None:
            entry = self.memo.put(self._solve(key, horizon))
        return entry.value + correction

    def decision(self, s, horizon: int) -> int:
        s = as_state(s)
        key, _ = self._key(s, horizon)
        self.value(key, horizon)
        return self.memo.get(key, horizon).decision

    def _q(self, s: SystemState, L: int, horizon: int) -> float:
        expected = 0.0
        for k, local, weight in self._events:
            expected += weight * self.value(next_state(s, L, k, local), horizon - 1)
        return cost_with_ama(s, L, self.params) + expected

    def _solve(self, s: SystemState, horizon: int) -> MemoEntry:
        q_values = [(L, self._q(s, L, horizon)) for L in range(s.counts[0], s.total + 1)]
        best, decision = largest_minimizer(q_values)
        no_ama = q_values[0][1] if s.counts[0] == 0 else self._q(s, 0, horizon)
        value = self.params.p_a * best + (1.0 - self.params.p_a) * no_ama
        return MemoEntry(s, horizon, value, decision)


def solver_for(params: ModelParams, memo: Optional[MemoStore] = None) -> BackwardInductionSolver:
    """The backward-induction solver attached to ``memo`` (a fresh one when memo is None)."""
    if memo is None:
        return BackwardInductionSolver(params)
    with _ATTACH_LOCK:
        if memo.solver is None:
            memo.solver = BackwardInductionSolver(params, memo)
        elif memo.solver.params != params:
            raise InvariantViolation("memo store is already bound to different parameters")
        return memo.solver


def value(s, horizon: int, params: ModelParams, memo: Optional[MemoStore] = None) -> float:
    return solver_for(params, memo).value(s, horizon)


def value_with_ama(
    s, L: int, horizon: int, params: ModelParams, memo: Optional[MemoStore] = None
) -> float:
    return solver_for(params, memo).value_with_ama(s, L, horizon)


def value_without_ama(
    s, horizon: int, params: ModelParams, memo: Optional[MemoStore] = None
) -> float:
    return solver_for(params, memo).value_without_ama(s, horizon)


def f_function(
    s, L: int, horizon: int, params: ModelParams, memo: Optional[MemoStore] = None
) -> float:
    return solver_for(params, memo).f_function(s, L, horizon)


def optimal_decision(
    s, horizon: int, params: ModelParams, memo: Optional[MemoStore] = None
) -> int:
    return solver_for(params, memo).optimal_decision(s, horizon)
