"""
Brute-force referee for the DP.

Expands the full event tree (AMA, arrival, local service) and minimizes over
every feasible L at every node. No memoization, no state reduction: its only
job is to be independent of the optimizations it checks.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple

from errors import OracleCapExceededError
from model import ModelParams, SystemState, as_state, cost_with_ama, next_state
from dp import tie_tolerance

logger = logging.getLogger(__name__)

HORIZON_CAP = 6
N_CAP = 4


class IdleBranchReading(str, Enum):
    """How the AMA-absent branch weighs its successors."""

    CORRECTED = "corrected"  # mu * J(s') + (1 - mu) * J(s'')
    LITERAL = "literal"  # J(s') in both terms


@dataclass(frozen=True)
class OracleConfig:
    max_total_tasks: int = 12
    max_horizon: int = HORIZON_CAP
    idle_branch_reading: IdleBranchReading = IdleBranchReading.CORRECTED

    def __post_init__(self):
        if self.max_horizon > HORIZON_CAP:
            raise OracleCapExceededError(f"oracle horizon cap is at most {HORIZON_CAP}")


def _check_caps(s: SystemState, horizon: int, params: ModelParams, cfg: OracleConfig) -> None:
    if params.N > N_CAP:
        raise OracleCapExceededError(f"oracle supports N <= {N_CAP} (got {params.N})")
    if horizon > cfg.max_horizon:
        raise OracleCapExceededError(f"horizon {horizon} exceeds oracle cap {cfg.max_horizon}")
    if s.total > cfg.max_total_tasks:
        raise OracleCapExceededError(
            f"state {s} holds {s.total} tasks, over the cap of {cfg.max_total_tasks}"
        )


def _expected(s: SystemState, L: int, horizon: int, params: ModelParams, cfg, ama: bool) -> float:
    terms = []
    for k, p_k in enumerate(params.arrival):
        if p_k == 0.0:
            continue
        served = next_state(s, L, k, True)
        idle = next_state(s, L, k, False)
        if not ama and cfg.idle_branch_reading is IdleBranchReading.LITERAL:
            idle = served
        if params.mu > 0.0:
            terms.append(p_k * params.mu * _value(served, horizon - 1, params, cfg))
        if params.mu < 1.0:
            terms.append(p_k * (1.0 - params.mu) * _value(idle, horizon - 1, params, cfg))
    return math.fsum(terms)


def _q_values(s: SystemState, horizon: int, params: ModelParams, cfg: OracleConfig):
    return [
        (L, cost_with_ama(s, L, params) + _expected(s, L, horizon, params, cfg, ama=True))
        for L in range(0, s.total + 1)
    ]


def _value(s: SystemState, horizon: int, params: ModelParams, cfg: OracleConfig) -> float:
    if horizon == 0:
        return 0.0
    _check_caps(s, horizon, params, cfg)
    with_ama = min(q for _, q in _q_values(s, horizon, params, cfg))
    without_ama = params.C_p * s.counts[0] + _expected(s, 0, horizon, params, cfg, ama=False)
    return params.p_a * with_ama + (1.0 - params.p_a) * without_ama


def oracle_value(s, horizon: int, params: ModelParams, cfg: Optional[OracleConfig] = None) -> float:
    """Exact optimal expected total cost by exhaustive expansion."""
    cfg = cfg or OracleConfig()
    s = as_state(s)
    _check_caps(s, horizon, params, cfg)
    return _value(s, horizon, params, cfg)


def oracle_policy(s, horizon: int, params: ModelParams, cfg: Optional[OracleConfig] = None) -> int:
    """Largest minimizer over the full decision set {0, ..., total}."""
    return oracle_solve(s, horizon, params, cfg)[1]


def oracle_solve(
    s, horizon: int, params: ModelParams, cfg: Optional[OracleConfig] = None
) -> Tuple[float, int]:
    """
    Value and decision from one expansion of the tree below ``s``.

    Returns:
        (J_horizon(s), largest minimizer of Q(s, L) over 0..total)
    """
    cfg = cfg or OracleConfig()
    s = as_state(s)
    _check_caps(s, horizon, params, cfg)
    if horizon == 0:
        return 0.0, 0
    q_values = _q_values(s, horizon, params, cfg)
    best = min(q for _, q in q_values)
    bound = best + tie_tolerance(best)
    decision = max(L for L, q in q_values if q <= bound)
    without_ama = params.C_p * s.counts[0] + _expected(s, 0, horizon, params, cfg, ama=False)
    return params.p_a * best + (1.0 - params.p_a) * without_ama, decision


def small_states(N: int, max_total: int) -> Iterator[SystemState]:
    """Every state of dimension N holding at most ``max_total`` tasks."""
    for counts in itertools.product(range(max_total + 1), repeat=N):
        if sum(counts) <= max_total:
            yield SystemState(counts)


def find_reading_discrepancy(
    params: ModelParams, max_total: int = 2, max_horizon: int = 3, tolerance: float = 1e-9
) -> Optional[Tuple[SystemState, int, float, float]]:
    """
    Search small states for one where the two readings of the AMA-absent
    branch give different values.

    Returns:
        (state, horizon, corrected value, literal value), or None if they agree everywhere
    """
    corrected = OracleConfig(idle_branch_reading=IdleBranchReading.CORRECTED)
    literal = OracleConfig(idle_branch_reading=IdleBranchReading.LITERAL)
    for horizon in range(1, max_horizon + 1):
        for s in small_states(params.N, max_total):
            a = oracle_value(s, horizon, params, corrected)
            b = oracle_value(s, horizon, params, literal)
            if abs(a - b) > tolerance:
                logger.info("readings differ at %s, horizon %d: %.12g vs %.12g", s, horizon, a, b)
                return s, horizon, a, b
    return None
