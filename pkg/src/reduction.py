"""
Reduced and lean states.

A reduced state has no excessive tasks: for every deadline j inside the
horizon, at most j - 1 tasks are due by j. The lean state of a generic state
keeps just enough tasks to reach the same reduced state under any sequence
of AMA-free slots; its value differs from the original's by a closed-form
correction, which is what keeps the DP on a finite key space.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

from errors import InvalidPairError, RangeError
from model import ModelParams, SystemState

logger = logging.getLogger(__name__)

MAX_REDUCED_N = 14
MAX_LEAN_N = 8


@dataclass(frozen=True)
class LeanDecomposition:
    original: SystemState
    reduced: SystemState
    lean: SystemState
    L_g: int
    gamma: Tuple[int, ...]
    C_lean: float


def _span(s: SystemState, horizon: int) -> int:
    return min(s.N, max(horizon, 0))


def is_reduced(s: SystemState, horizon: int) -> bool:
    prefix = 0
    for j in range(1, _span(s, horizon) + 1):
        prefix += s.counts[j - 1]
        if prefix > j - 1:
            return False
    return True


def enumerate_reduced(N: int) -> List[SystemState]:
    """All reduced states for a horizon of at least N, in lexicographic order."""
    if not 1 <= N <= MAX_REDUCED_N:
        raise RangeError(f"enumerate_reduced supports 1 <= N <= {MAX_REDUCED_N} (got {N})")
    states: List[SystemState] = []

    def extend(prefix: List[int], used: int):
        j = len(prefix) + 1
        if j > N:
            states.append(SystemState(tuple(prefix)))
            return
        for value in range(0, j - used):
            prefix.append(value)
            extend(prefix, used + value)
            prefix.pop()

    extend([], 0)
    return states


def to_reduced(s: SystemState, horizon: int) -> Tuple[SystemState, int]:
    """
    Strip excessive tasks, most imminent first.

    Prefix sums are taken over the working state as it is being stripped;
    deadlines beyond the horizon are never touched.

    Returns:
        The reduced state and L_g, the number of tasks stripped
    """
    working = list(s.counts)
    stripped = 0
    for i in range(1, _span(s, horizon) + 1):
        excess = sum(working[:i]) - i + 1
        if excess <= 0:
            continue
        stripped += excess
        for j in range(i):
            if excess == 0:
                break
            taken = min(working[j], excess)
            working[j] -= taken
            excess -= taken
    return SystemState(tuple(working)), stripped


def gamma_vector(s: SystemState, horizon: int) -> Tuple[int, ...]:
    gamma = [0] * s.N
    used = 0
    for j in range(2, _span(s, horizon) + 1):
        gamma[j - 1] = min(s.counts[j - 1], j - 1 - used)
        used += gamma[j - 1]
    return tuple(gamma)


def lean_correction(s: SystemState, lean: SystemState, params: ModelParams) -> float:
    """
    Extra expected cost carried by the tasks a state holds beyond its lean state.

    Each such task with deadline i is offloaded at the first AMA visit within
    i slots and expires otherwise.
    """
    if len(s) != len(lean):
        raise InvalidPairError(f"dimension mismatch between {s} and {lean}")
    excess = [a - b for a, b in zip(s.counts, lean.counts)]
    if any(e < 0 for e in excess):
        raise InvalidPairError(f"lean state {lean} is not below {s} componentwise")
    if not any(excess):
        return 0.0
    q = params.q
    N = len(s)
    offloaded = math.fsum(e * (1.0 - q**i) for i, e in enumerate(excess, 1))
    cumulative = list(itertools.accumulate(excess))
    expiring_early = math.fsum(q**i * cumulative[i - 1] for i in range(1, N))
    return (
        params.C_o * offloaded
        + params.C_p * params.p_a * expiring_early
        + params.C_p * q**N * cumulative[-1]
    )


def _lean_parts(s: SystemState, horizon: int):
    reduced, L_g = to_reduced(s, horizon)
    gamma = gamma_vector(s, horizon)
    span = _span(s, horizon)
    lean_counts = tuple(
        max(gamma[j], reduced.counts[j]) if j < span else s.counts[j] for j in range(s.N)
    )
    return reduced, L_g, gamma, SystemState(lean_counts)


def lean_state(s: SystemState, horizon: int) -> SystemState:
    """The lean state alone, for callers that never need the correction cost."""
    return _lean_parts(s, horizon)[3]


def to_lean(s: SystemState, horizon: int, params: ModelParams) -> LeanDecomposition:
    """Decompose ``s`` into its reduced and lean states, with the correction cost."""
    if params is None:
        raise TypeError("to_lean needs model parameters to price the correction")
    reduced, L_g, gamma, lean = _lean_parts(s, horizon)
    correction = 0.0 if lean == s else lean_correction(s, lean, params)
    return LeanDecomposition(s, reduced, lean, L_g, gamma, correction)


def truncate(s: SystemState, horizon: int) -> SystemState:
    """Zero every deadline beyond the horizon; those tasks are cost-inert."""
    span = _span(s, horizon)
    if all(v == 0 for v in s.counts[span:]):
        return s
    return SystemState(s.counts[:span] + (0,) * (s.N - span))


def canonical_key(s: SystemState, horizon: int, params: ModelParams) -> Tuple[SystemState, float]:
    """Memo key for ``s`` at this remaining horizon, plus the value offset to add to it."""
    decomposition = to_lean(s, horizon, params)
    return truncate(decomposition.lean, horizon), decomposition.C_lean


def enumerate_lean(N: int, horizon: int) -> List[SystemState]:
    """
    Every memo key for this horizon: lean fixed points with n_1 = 0 and
    n_j <= j - 1, zero beyond the horizon. Lexicographic order.
    """
    if not 1 <= N <= MAX_LEAN_N:
        raise RangeError(f"enumerate_lean supports 1 <= N <= {MAX_LEAN_N} (got {N})")
    span = min(N, max(horizon, 0))
    ranges = [range(0, j) for j in range(1, span + 1)] + [range(0, 1)] * (N - span)
    keys = []
    for counts in itertools.product(*ranges):
        candidate = SystemState(counts)
        if lean_state(candidate, horizon) == candidate:
            keys.append(candidate)
    logger.debug("enumerate_lean(N=%d, horizon=%d): %d keys", N, horizon, len(keys))
    return keys
