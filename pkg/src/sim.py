"""
Seeded Monte Carlo simulation of the slot pipeline.

Each replication draws three uniforms per slot (AMA, arrival, local service)
from its own counter-based Philox stream, so every policy sees the same
events for the same (seed, replication) pair. Policy-internal randomness
comes from a separate stream and never perturbs the shared events.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from errors import InvariantViolation, PolicyContractError
from metrics import MetricsCalculator
from model import (
    ModelParams,
    SlotOutcome,
    SystemState,
    add_arrival,
    local_process,
    offload_vector,
    shift,
)
from policy import PolicyEngine
from reduction import to_reduced

logger = logging.getLogger(__name__)

RNG_NAME = "numpy.random.Philox"
POLICY_STREAM = 1


class PolicyKind(str, Enum):
    OPTIMAL = "optimal"
    THRESHOLD = "threshold"
    EXPIRY_DRIVEN = "expiry_driven"
    RANDOM = "random"
    ON_THE_SPOT = "on_the_spot"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    B: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.THRESHOLD and (self.B is None or self.B < 0):
            raise ValueError(f"threshold policy needs B >= 0 (got {self.B})")

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.THRESHOLD:
            return f"threshold(B={self.B})"
        return self.kind.value


class OptimalPolicy:
    def __init__(self, engine: PolicyEngine):
        self.engine = engine

    def decide(self, s: SystemState, horizon: int) -> int:
        return self.engine.decide(s, horizon).L_star


class ThresholdPolicy:
    """Offload down to a queue length of at most B."""

    def __init__(self, B: int):
        self.B = B

    def decide(self, s: SystemState, horizon: int) -> int:
        return max(0, s.total - self.B)


class ExpiryDrivenPolicy:
    """Offload only what would expire this slot."""

    def decide(self, s: SystemState, horizon: int) -> int:
        return s.counts[0]


class RandomPolicy:
    """Uniform count on {0, ..., total}, taken most imminent first."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def decide(self, s: SystemState, horizon: int) -> int:
        return int(self.rng.integers(0, s.total + 1))


class OnTheSpotPolicy:
    def decide(self, s: SystemState, horizon: int) -> int:
        return s.total


def make_policy(spec: PolicySpec, engine: Optional[PolicyEngine] = None, rng=None):
    if spec.kind is PolicyKind.OPTIMAL:
        if engine is None:
            raise ValueError("the optimal policy needs a PolicyEngine")
        return OptimalPolicy(engine)
    if spec.kind is PolicyKind.THRESHOLD:
        return ThresholdPolicy(spec.B)
    if spec.kind is PolicyKind.EXPIRY_DRIVEN:
        return ExpiryDrivenPolicy()
    if spec.kind is PolicyKind.RANDOM:
        return RandomPolicy(rng if rng is not None else np.random.default_rng(0))
    return OnTheSpotPolicy()


@dataclass
class SlotDeltas:
    arrived: int = 0
    expired: int = 0
    offloaded: int = 0
    processed: int = 0
    local_opportunities: int = 0
    local_used: int = 0


@dataclass
class SimMetrics:
    """Per-replication accumulators. Costs are derived from the integer counts."""

    replication: int
    C_o: float
    C_p: float
    initial_tasks: int = 0
    slots: int = 0
    tasks_arrived: int = 0
    tasks_expired: int = 0
    tasks_offloaded: int = 0
    tasks_processed: int = 0
    tasks_pruned: int = 0
    local_opportunities: int = 0
    local_used: int = 0
    final_queue: int = 0
    slot_costs: Optional[List[float]] = None

    @property
    def total_cost(self) -> float:
        return self.C_o * self.tasks_offloaded + self.C_p * self.tasks_expired

    @property
    def cost_per_slot(self) -> float:
        return self.total_cost / self.slots if self.slots else 0.0

    @property
    def cost_per_task(self) -> float:
        tasks = self.initial_tasks + self.tasks_arrived
        return self.total_cost / tasks if tasks else 0.0

    @property
    def local_utilisation(self) -> float:
        if not self.local_opportunities:
            return 0.0
        return self.local_used / self.local_opportunities

    def add(self, deltas: SlotDeltas) -> None:
        self.slots += 1
        self.tasks_arrived += deltas.arrived
        self.tasks_expired += deltas.expired
        self.tasks_offloaded += deltas.offloaded
        self.tasks_processed += deltas.processed
        self.local_opportunities += deltas.local_opportunities
        self.local_used += deltas.local_used

    def check(self) -> None:
        inflow = self.initial_tasks + self.tasks_arrived
        outflow = (
            self.tasks_expired
            + self.tasks_offloaded
            + self.tasks_processed
            + self.tasks_pruned
            + self.final_queue
        )
        if inflow != outflow:
            raise InvariantViolation(
                f"replication {self.replication}: {inflow} tasks in, {outflow} accounted for"
            )
        if self.local_used > self.local_opportunities:
            raise InvariantViolation(
                f"replication {self.replication}: used more service than offered"
            )

    def as_row(self) -> Dict[str, float]:
        return {
            "replication": self.replication,
            "slots": self.slots,
            "total_cost": self.total_cost,
            "cost_per_slot": self.cost_per_slot,
            "cost_per_task": self.cost_per_task,
            "arrived": self.tasks_arrived,
            "expired": self.tasks_expired,
            "offloaded": self.tasks_offloaded,
            "processed": self.tasks_processed,
            "local_opportunities": self.local_opportunities,
            "local_used": self.local_used,
        }

    def scores(self) -> Dict[str, float]:
        return {
            "total_cost": self.total_cost,
            "cost_per_slot": self.cost_per_slot,
            "cost_per_task": self.cost_per_task,
            "local_utilisation": self.local_utilisation,
        }


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    policy: PolicySpec
    replications: int = 30
    base_seed: int = 0
    initial_state: Optional[SystemState] = None
    restrict_to_reduced: bool = False
    record_series: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1 (got {self.replications})")
        if self.initial_state is not None and self.initial_state.N != self.params.N:
            raise ValueError(
                f"initial state {self.initial_state} does not have N = {self.params.N} buckets"
            )

    def with_policy(self, policy: PolicySpec) -> "SimConfig":
        return replace(self, policy=policy)


@dataclass
class SimResult:
    config: SimConfig
    replications: List[SimMetrics]
    summary: Dict[str, float] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.config.policy.name


def event_stream(base_seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([base_seed, replication])))


def policy_stream(base_seed: int, replication: int) -> np.random.Generator:
    seed = np.random.SeedSequence([base_seed, replication, POLICY_STREAM])
    return np.random.Generator(np.random.Philox(seed))


def sample_outcome(
    rng: np.random.Generator, params: ModelParams, cumulative: np.ndarray
) -> SlotOutcome:
    u = rng.random(3)
    k = min(int(np.searchsorted(cumulative, u[1], side="right")), params.N)
    return SlotOutcome(bool(u[0] < params.p_a), k, bool(u[2] < params.mu))


def run_slot(
    s: SystemState, policy, outcome: SlotOutcome, params: ModelParams, horizon: int = 1
) -> Tuple[SystemState, float, SlotDeltas]:
    """
    Apply one slot's events in order: offload, shift, arrival, local service.

    Args:
        s: State at the start of the slot
        policy: Object with decide(state, remaining_horizon) -> L
        outcome: The slot's random events
        params: Model parameters
        horizon: Remaining slots including this one

    Returns:
        (next state, slot cost, per-slot counters)
    """
    deltas = SlotDeltas()
    cost = 0.0
    if outcome.ama_present:
        L = policy.decide(s, horizon)
        valid = isinstance(L, (int, np.integer)) and not isinstance(L, bool)
        if not valid or not 0 <= L <= s.total:
            raise PolicyContractError(f"policy returned L={L!r} for {s} holding {s.total} tasks")
        L = int(L)
        s = offload_vector(s, L)
        deltas.offloaded = L
        cost += params.C_o * L
    s, expired = shift(s)
    deltas.expired = expired
    cost += params.C_p * expired
    s = add_arrival(s, outcome.arrival_deadline)
    deltas.arrived = 1 if outcome.arrival_deadline > 0 else 0
    if outcome.local_service:
        deltas.local_opportunities = 1
        if not s.is_empty:
            s = local_process(s)
            deltas.local_used = 1
            deltas.processed = 1
    return s, cost, deltas


def run_replication(
    cfg: SimConfig, replication: int, engine: Optional[PolicyEngine] = None
) -> SimMetrics:
    params = cfg.params
    events = event_stream(cfg.base_seed, replication)
    policy = make_policy(cfg.policy, engine, policy_stream(cfg.base_seed, replication))
    cumulative = np.cumsum(np.asarray(params.arrival, dtype=float))
    state = cfg.initial_state if cfg.initial_state is not None else SystemState.empty(params.N)
    metrics = SimMetrics(replication, params.C_o, params.C_p, initial_tasks=state.total)
    if cfg.record_series:
        metrics.slot_costs = []
    for t in range(params.T):
        remaining = params.T - t
        if cfg.restrict_to_reduced:
            state, pruned = to_reduced(state, remaining)
            metrics.tasks_pruned += pruned
        outcome = sample_outcome(events, params, cumulative)
        state, cost, deltas = run_slot(state, policy, outcome, params, remaining)
        metrics.add(deltas)
        if metrics.slot_costs is not None:
            metrics.slot_costs.append(cost)
    metrics.final_queue = state.total
    metrics.check()
    return metrics


def _worker_count(threads: int, replications: int) -> int:
    if threads <= 0:
        threads = os.cpu_count() or 1
    return max(1, min(threads, replications))


def run(cfg: SimConfig, engine: Optional[PolicyEngine] = None, threads: int = 1) -> SimResult:
    """
    Run every replication of ``cfg`` and summarize them.

    Args:
        cfg: Simulation config
        engine: Shared policy engine, created on demand for the optimal policy
        threads: Worker threads for replications (0 = one per CPU)

    Returns:
        SimResult with per-replication metrics in replication order
    """
    if cfg.policy.kind is PolicyKind.OPTIMAL:
        if engine is None:
            engine = PolicyEngine(cfg.params)
        engine.solver.solve_through(cfg.params.T)
    workers = _worker_count(threads, cfg.replications)
    logger.info(
        "simulating %s: %d replications x %d slots on %d thread(s)",
        cfg.policy.name,
        cfg.replications,
        cfg.params.T,
        workers,
    )
    if workers == 1:
        results = [run_replication(cfg, r, engine) for r in range(cfg.replications)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = pool.map(lambda r: run_replication(cfg, r, engine), range(cfg.replications))
            results = list(jobs)
    summary = MetricsCalculator().aggregate_scores([m.scores() for m in results])
    return SimResult(cfg, results, summary)


def _require_costed_queue(cfg: SimConfig, runs: int) -> None:
    if cfg.restrict_to_reduced and runs > 1:
        raise ValueError(
            "restrict_to_reduced drops excessive tasks free of charge; "
            "disable it when comparing policies"
        )


def compare_policies(
    cfg: SimConfig,
    policies: Iterable[PolicySpec],
    engine: Optional[PolicyEngine] = None,
    threads: int = 1,
) -> Dict[str, SimResult]:
    """
    Run several policies on the same seeds (common random numbers).

    Raises:
        ValueError: if more than one policy is run with slot-start pruning; the
            pruned tasks leave the queue without being charged, so costs would
            not be comparable across policies
    """
    policies = list(policies)
    _require_costed_queue(cfg, len(policies))
    results = {}
    for spec in policies:
        results[spec.name] = run(cfg.with_policy(spec), engine, threads)
    return results


def sweep_threshold(
    cfg: SimConfig, B_range: Iterable[int], threads: int = 1
) -> Tuple[int, Dict[int, SimResult]]:
    """
    Threshold policy for every B on common random numbers.

    Returns:
        The B with the lowest mean cost per slot (smallest B on ties) and all results
    """
    B_values = list(B_range)
    if not B_values:
        raise ValueError("B_range must not be empty")
    _require_costed_queue(cfg, len(B_values))
    results = {
        B: run(cfg.with_policy(PolicySpec(PolicyKind.THRESHOLD, B)), threads=threads)
        for B in B_values
    }
    best_B = min(B_values, key=lambda B: (results[B].summary["cost_per_slot_mean"], B))
    logger.info("best threshold B=%d", best_B)
    return best_B, results
