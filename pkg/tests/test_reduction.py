"""
Unit and property tests for reduced and lean states.
"""

import functools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dp import BackwardInductionSolver, TopDownSolver
from errors import InvalidPairError, RangeError
from model import ModelParams, SystemState, add_arrival, local_process, offload_vector, shift
from oracle import oracle_value
from reduction import (
    enumerate_lean,
    enumerate_reduced,
    gamma_vector,
    is_reduced,
    lean_correction,
    lean_state,
    to_lean,
    to_reduced,
    truncate,
)


def S(*counts):
    return SystemState(counts)


LEAN_PARAMS = ModelParams.with_uniform_arrival(
    N=5, T=8, p_a=0.7, mu=0.7, p0=0.5, C_o=1.0, C_p=3.0
)

states = st.integers(min_value=1, max_value=5).flatmap(
    lambda N: st.lists(st.integers(0, 5), min_size=N, max_size=N).map(SystemState.of)
)


class TestReducedStates:
    """Test cases for is_reduced / enumerate_reduced / to_reduced."""

    def test_is_reduced(self):
        """Test the prefix-sum condition."""
        assert is_reduced(S(0, 1, 1), 3)
        assert not is_reduced(S(1, 0, 0), 1)
        assert is_reduced(S(0, 0, 2), 3)

    def test_deadlines_beyond_horizon_are_exempt(self):
        """Test horizon truncation of the condition."""
        assert is_reduced(S(0, 0, 5), 2)
        assert not is_reduced(S(0, 0, 5), 3)

    def test_enumerate_n3(self):
        """Test the five reduced states of N = 3."""
        assert enumerate_reduced(3) == [S(0, 0, 0), S(0, 0, 1), S(0, 0, 2), S(0, 1, 0), S(0, 1, 1)]

    def test_catalan_counts(self):
        """Test the count equals the Catalan number."""
        counts = [len(enumerate_reduced(N)) for N in range(1, 8)]
        assert counts == [1, 2, 5, 14, 42, 132, 429]

    def test_enumerate_out_of_range(self):
        """Test the enumeration bounds."""
        with pytest.raises(RangeError):
            enumerate_reduced(0)
        with pytest.raises(RangeError):
            enumerate_reduced(15)

    def test_to_reduced_strips_excessive_tasks(self):
        """Test stripping with working-state prefix sums."""
        assert to_reduced(S(3, 3, 3, 3, 3), 5) == (S(0, 0, 0, 1, 3), 11)
        assert to_reduced(S(3, 3, 3, 3, 3), 9) == (S(0, 0, 0, 1, 3), 11)
        assert to_reduced(S(1, 2, 3, 4, 3), 4) == (S(0, 0, 0, 3, 3), 7)
        assert to_reduced(S(1, 2, 3, 4, 3), 5) == (S(0, 0, 0, 1, 3), 9)

    def test_to_reduced_fixed_point(self):
        """Test reduced states are left alone."""
        for s in enumerate_reduced(4):
            assert to_reduced(s, 10) == (s, 0)

    def test_both_example_states_share_a_reduced_state(self):
        """Test two states that differ only in excessive tasks."""
        assert to_reduced(S(2, 6, 3, 0, 0), 5)[0] == S(0, 0, 2, 0, 0)
        assert to_reduced(S(0, 3, 3, 0, 0), 5)[0] == S(0, 0, 2, 0, 0)

    @given(states, st.integers(min_value=1, max_value=7))
    @settings(max_examples=200, deadline=None)
    def test_to_reduced_properties(self, s, horizon):
        """Test the result is reduced, idempotent and equals offloading L_g tasks."""
        reduced, L_g = to_reduced(s, horizon)
        assert is_reduced(reduced, horizon)
        assert to_reduced(reduced, horizon) == (reduced, 0)
        assert offload_vector(s, L_g) == reduced


class TestLeanStates:
    """Test cases for gamma_vector / to_lean / lean_correction."""

    def test_example_lean_states(self):
        """Test lean states of the worked examples."""
        assert lean_state(S(1, 2, 3, 4, 3), 5) == S(0, 1, 1, 1, 3)
        assert lean_state(S(1, 2, 3, 4, 3), 4) == S(0, 1, 1, 3, 3)
        decomposition = to_lean(S(0, 3, 4, 0, 5), 6, LEAN_PARAMS)
        assert decomposition.lean == S(0, 1, 1, 0, 4)
        assert decomposition.L_g == 8

    def test_gamma_vector(self):
        """Test the greedy gamma allocation."""
        assert gamma_vector(S(1, 2, 3, 4, 3), 5) == (0, 1, 1, 1, 1)
        assert gamma_vector(S(0, 0, 0, 5), 2) == (0, 0, 0, 0)

    def test_lean_state_is_fixed_point(self):
        """Test a lean state maps to itself with zero correction."""
        lean = S(0, 1, 1, 1, 3)
        decomposition = to_lean(lean, 5, LEAN_PARAMS)
        assert decomposition.lean == lean
        assert decomposition.C_lean == 0.0

    def test_correction_needs_params(self):
        """Test the decomposition refuses to leave C_lean unpriced."""
        with pytest.raises(TypeError):
            to_lean(S(1, 2, 3, 4, 3), 5)
        with pytest.raises(TypeError):
            to_lean(S(1, 2, 3, 4, 3), 5, None)

    @given(states, st.integers(min_value=1, max_value=7))
    @settings(max_examples=100, deadline=None)
    def test_correction_is_always_priced(self, s, horizon):
        """Test C_lean is finite, non-negative and zero exactly on lean states."""
        decomposition = to_lean(s, horizon, LEAN_PARAMS)
        assert math.isfinite(decomposition.C_lean)
        assert decomposition.C_lean >= 0.0
        if decomposition.lean == s:
            assert decomposition.C_lean == 0.0
        else:
            assert decomposition.C_lean > 0.0

    def test_correction_zero_for_equal_states(self, base_params):
        """Test C_lean vanishes when nothing is removed."""
        assert lean_correction(S(0, 1, 1), S(0, 1, 1), base_params) == 0.0

    def test_correction_with_certain_ama(self):
        """Test p_a = 1 charges C_o per excess task."""
        params = ModelParams.with_uniform_arrival(
            N=3, T=5, p_a=1.0, mu=0.5, p0=0.5, C_o=1.0, C_p=3.0
        )
        assert lean_correction(S(2, 2, 2), S(0, 1, 1), params) == pytest.approx(4.0)

    def test_correction_rejects_bad_pairs(self, base_params):
        """Test the lean state must lie below the original."""
        with pytest.raises(InvalidPairError):
            lean_correction(S(0, 1), S(0, 2), base_params)
        with pytest.raises(InvalidPairError):
            lean_correction(S(0, 1), S(0, 1, 0), base_params)

    def test_truncate(self):
        """Test deadlines beyond the horizon are zeroed."""
        assert truncate(S(0, 1, 2, 3), 2) == S(0, 1, 0, 0)
        assert truncate(S(0, 1, 2, 3), 9) == S(0, 1, 2, 3)

    @given(states, st.integers(min_value=1, max_value=7))
    @settings(max_examples=200, deadline=None)
    def test_sandwich_and_idempotence(self, s, horizon):
        """Test reduced <= lean <= original and lean is a fixed point."""
        decomposition = to_lean(s, horizon, LEAN_PARAMS)
        for r, l, o in zip(decomposition.reduced, decomposition.lean, s):
            assert r <= l <= o
        assert decomposition.gamma[0] == 0
        assert lean_state(decomposition.lean, horizon) == decomposition.lean

    @given(
        st.lists(st.integers(0, 4), min_size=4, max_size=4).map(SystemState.of),
        st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=1, max_size=4),
    )
    @settings(max_examples=150, deadline=None)
    def test_same_reduced_target_without_ama(self, s, events):
        """Test s and its lean state reach the same reduced state without the AMA."""
        horizon = len(events) + 4
        lean = lean_state(s, horizon)
        a, b = s, lean
        for k, local in events:
            a, _ = shift(a)
            b, _ = shift(b)
            a, b = add_arrival(a, k), add_arrival(b, k)
            if local:
                a, b = local_process(a), local_process(b)
        remaining = horizon - len(events)
        assert to_reduced(a, remaining)[0] == to_reduced(b, remaining)[0]


class TestLeanEnumeration:
    """Test cases for enumerate_lean."""

    def test_n3_contains_every_reduced_state(self):
        """Test all 6 box states are lean keys for N = 3."""
        keys = enumerate_lean(3, 3)
        assert len(keys) == 6
        assert set(enumerate_reduced(3)) <= set(keys)

    def test_n4_excludes_non_lean_box_state(self):
        """Test (0,1,2,3) is not a key: it maps to (0,1,1,3)."""
        keys = enumerate_lean(4, 4)
        assert S(0, 1, 2, 3) not in keys
        assert lean_state(S(0, 1, 2, 3), 4) == S(0, 1, 1, 3)

    def test_every_key_is_fixed_point(self):
        """Test idempotence over the enumeration."""
        for key in enumerate_lean(5, 5):
            assert lean_state(key, 5) == key

    @given(st.lists(st.integers(0, 6), min_size=4, max_size=4).map(SystemState.of))
    @settings(max_examples=300, deadline=None)
    def test_closure(self, s):
        """Test the truncated lean state of any state is an enumerated key."""
        keys = set(enumerate_lean(4, 4))
        assert truncate(lean_state(s, 4), 4) in keys

    def test_out_of_range(self):
        """Test the N cap."""
        with pytest.raises(RangeError):
            enumerate_lean(9, 9)


IDENTITY_PARAMS = {
    "two_deadlines": ModelParams.with_uniform_arrival(
        N=2, T=5, p_a=0.4, mu=0.3, p0=0.3, C_o=1.0, C_p=2.5
    ),
    "reference": ModelParams.with_uniform_arrival(
        N=3, T=5, p_a=0.7, mu=0.7, p0=0.5, C_o=1.0, C_p=3.0
    ),
    "four_deadlines": ModelParams.with_uniform_arrival(
        N=4, T=5, p_a=0.6, mu=0.5, p0=0.4, C_o=1.0, C_p=3.0
    ),
    "rare_ama": ModelParams.with_uniform_arrival(
        N=4, T=5, p_a=0.2, mu=0.8, p0=0.2, C_o=1.0, C_p=4.0
    ),
}


@functools.lru_cache(maxsize=None)
def generic_solver(name: str) -> TopDownSolver:
    """Top-down solver keyed on raw states, shared across examples."""
    return TopDownSolver(IDENTITY_PARAMS[name], use_lean=False)


@functools.lru_cache(maxsize=None)
def lean_keyed_solver(name: str) -> BackwardInductionSolver:
    return BackwardInductionSolver(IDENTITY_PARAMS[name])


def identity_cases(max_count: int, max_horizon: int):
    """(parameter set, state of matching dimension, horizon) triples."""
    return st.sampled_from(sorted(IDENTITY_PARAMS)).flatmap(
        lambda name: st.tuples(
            st.just(name),
            st.lists(
                st.integers(0, max_count),
                min_size=IDENTITY_PARAMS[name].N,
                max_size=IDENTITY_PARAMS[name].N,
            ).map(SystemState.of),
            st.integers(min_value=2, max_value=max_horizon),
        )
    )


def check_lean_identity(name: str, s: SystemState, horizon: int) -> None:
    params = IDENTITY_PARAMS[name]
    generic = generic_solver(name)
    decomposition = to_lean(s, horizon, params)
    J_s = generic.value(s, horizon)
    J_lean = generic.value(decomposition.lean, horizon)
    assert J_s - J_lean == pytest.approx(decomposition.C_lean, abs=1e-9)
    assert lean_keyed_solver(name).value(s, horizon) == pytest.approx(J_s, abs=1e-9)
    if s.total <= 4 and horizon <= 3 and params.N <= 3:
        J_oracle = oracle_value(s, horizon, params)
        lean_oracle = oracle_value(decomposition.lean, horizon, params)
        assert J_s == pytest.approx(J_oracle, abs=1e-9)
        assert J_oracle - lean_oracle == pytest.approx(decomposition.C_lean, abs=1e-9)


class TestLeanValueIdentity:
    """J(s) = J(lean(s)) + C_lean, evaluated without any lean rewriting."""

    @given(identity_cases(max_count=3, max_horizon=4))
    @settings(max_examples=40, deadline=None)
    def test_value_difference_equals_correction(self, case):
        """Test the closed-form correction on random states."""
        check_lean_identity(*case)

    @pytest.mark.slow
    @given(identity_cases(max_count=5, max_horizon=5))
    @settings(max_examples=500, deadline=None)
    def test_correction_over_wide_states(self, case):
        """Test the correction on 500 states with up to five tasks per deadline."""
        check_lean_identity(*case)

    def test_lean_keyed_solvers_agree(self):
        """Test backward induction and the generic recursion agree on a few states."""
        fast = lean_keyed_solver("four_deadlines")
        for s in [S(1, 2, 3, 1), S(0, 3, 0, 2), S(2, 0, 2, 2)]:
            expected = generic_solver("four_deadlines").value(s, 4)
            assert fast.value(s, 4) == pytest.approx(expected, abs=1e-9)
