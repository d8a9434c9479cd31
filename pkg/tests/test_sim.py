"""
Tests for the Monte Carlo simulator.
"""

import functools
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pytest

from config import comparison_params
from errors import PolicyContractError
from metrics import MetricsCalculator
from model import ModelParams, SlotOutcome, SystemState
from policy import PolicyEngine
from sim import (
    PolicyKind,
    PolicySpec,
    SimConfig,
    compare_policies,
    event_stream,
    make_policy,
    run,
    run_replication,
    run_slot,
    sweep_threshold,
)


def S(*counts):
    return SystemState(counts)


class FixedPolicy:
    """Always returns the same L."""

    def __init__(self, L):
        self.L = L

    def decide(self, s, horizon):
        return self.L


@pytest.fixture
def certain_ama_params():
    """AMA every slot, no local service, no arrivals."""
    return ModelParams(N=3, T=3, p_a=1.0, mu=0.0, arrival=(1.0, 0.0, 0.0, 0.0), C_o=1.0, C_p=3.0)


class TestPolicySpec:
    """Test cases for PolicySpec."""

    def test_names(self):
        assert PolicySpec(PolicyKind.THRESHOLD, 3).name == "threshold(B=3)"
        assert PolicySpec("on_the_spot").name == "on_the_spot"

    def test_threshold_needs_B(self):
        with pytest.raises(ValueError):
            PolicySpec(PolicyKind.THRESHOLD)
        with pytest.raises(ValueError):
            PolicySpec(PolicyKind.THRESHOLD, -1)

    def test_optimal_needs_engine(self):
        with pytest.raises(ValueError):
            make_policy(PolicySpec(PolicyKind.OPTIMAL))


class TestBaselinePolicies:
    """Test cases for the baseline decision rules."""

    def test_threshold(self):
        policy = make_policy(PolicySpec(PolicyKind.THRESHOLD, 2))
        assert policy.decide(S(0, 2, 3), 5) == 3
        assert policy.decide(S(0, 1, 0), 5) == 0

    def test_expiry_driven(self):
        policy = make_policy(PolicySpec(PolicyKind.EXPIRY_DRIVEN))
        assert policy.decide(S(2, 4, 1), 5) == 2

    def test_on_the_spot(self):
        policy = make_policy(PolicySpec(PolicyKind.ON_THE_SPOT))
        assert policy.decide(S(2, 4, 1), 5) == 7

    def test_random_stays_in_range(self):
        policy = make_policy(PolicySpec(PolicyKind.RANDOM), rng=np.random.default_rng(3))
        draws = {policy.decide(S(1, 1, 1), 5) for _ in range(200)}
        assert draws <= {0, 1, 2, 3}
        assert len(draws) > 1


class TestRunSlot:
    """Test cases for run_slot on injected outcomes."""

    def test_worked_slot(self, convex_params):
        """Test the forced L = 2 trace."""
        params = convex_params
        s, cost, deltas = run_slot(
            S(0, 1, 2, 0, 1), FixedPolicy(2), SlotOutcome(True, 3, True), params
        )
        assert s == S(0, 0, 1, 1, 0)
        assert cost == 2 * params.C_o
        assert deltas.offloaded == 2
        assert deltas.arrived == 1
        assert deltas.local_used == 1

    def test_lone_expiry(self, small_params):
        outcome = SlotOutcome(False, 0, False)
        s, cost, deltas = run_slot(S(1, 0), FixedPolicy(0), outcome, small_params)
        assert s == S(0, 0)
        assert cost == small_params.C_p
        assert deltas.expired == 1

    def test_idle_service(self, small_params):
        """Test an unused service opportunity is still counted."""
        outcome = SlotOutcome(False, 0, True)
        s, cost, deltas = run_slot(S(0, 0), FixedPolicy(0), outcome, small_params)
        assert s == S(0, 0)
        assert cost == 0.0
        assert deltas.local_opportunities == 1
        assert deltas.local_used == 0

    def test_policy_not_consulted_without_ama(self, small_params):
        outcome = SlotOutcome(False, 0, False)
        s, _, deltas = run_slot(S(0, 2), FixedPolicy(99), outcome, small_params)
        assert s == S(2, 0)
        assert deltas.offloaded == 0

    @pytest.mark.parametrize("L", [-1, 4, 1.5, True, None])
    def test_policy_contract(self, small_params, L):
        """Test out-of-range or non-integer decisions."""
        with pytest.raises(PolicyContractError):
            run_slot(S(1, 2), FixedPolicy(L), SlotOutcome(True, 0, False), small_params)


class TestRun:
    """Test cases for full replications."""

    def test_everything_expires(self, no_arrival_params):
        """Test the no-service run: three tasks, three expiries."""
        cfg = SimConfig(
            no_arrival_params,
            PolicySpec(PolicyKind.OPTIMAL),
            replications=2,
            initial_state=S(2, 1, 0),
        )
        result = run(cfg)
        for metrics in result.replications:
            assert metrics.total_cost == 9.0
            assert metrics.cost_per_slot == 3.0
            assert metrics.cost_per_task == 3.0
            assert metrics.tasks_expired == 3
            assert metrics.final_queue == 0
        assert result.summary["total_cost_mean"] == 9.0

    def test_cost_identity_and_conservation(self, base_params):
        """Test the accounting identities on every baseline."""
        cfg = SimConfig(base_params.replace(T=60), PolicySpec(PolicyKind.RANDOM), replications=4)
        for kind in (PolicyKind.RANDOM, PolicyKind.EXPIRY_DRIVEN, PolicyKind.ON_THE_SPOT):
            for metrics in run(cfg.with_policy(PolicySpec(kind))).replications:
                assert metrics.total_cost == (
                    base_params.C_o * metrics.tasks_offloaded
                    + base_params.C_p * metrics.tasks_expired
                )
                assert metrics.initial_tasks + metrics.tasks_arrived == (
                    metrics.tasks_expired
                    + metrics.tasks_offloaded
                    + metrics.tasks_processed
                    + metrics.final_queue
                )
                assert metrics.local_used <= metrics.local_opportunities

    def test_deterministic(self, base_params):
        """Test identical configs give identical metrics, with and without threads."""
        cfg = SimConfig(
            base_params.replace(T=40),
            PolicySpec(PolicyKind.RANDOM),
            replications=6,
            base_seed=11,
        )
        first = [m.as_row() for m in run(cfg).replications]
        second = [m.as_row() for m in run(cfg, threads=3).replications]
        assert first == second

    def test_seed_changes_events(self, base_params):
        params = base_params.replace(T=40)
        a = run_replication(SimConfig(params, PolicySpec(PolicyKind.ON_THE_SPOT), base_seed=1), 0)
        b = run_replication(SimConfig(params, PolicySpec(PolicyKind.ON_THE_SPOT), base_seed=2), 0)
        assert a.as_row() != b.as_row()

    def test_event_streams_are_independent_of_policy(self):
        first = event_stream(5, 2).random(6)
        second = event_stream(5, 2).random(6)
        assert np.array_equal(first, second)
        assert not np.array_equal(first, event_stream(5, 3).random(6))

    def test_on_the_spot_never_expires(self, base_params):
        """Test offloading everything every slot leaves nothing to expire."""
        params = base_params.replace(T=50, p_a=1.0)
        result = run(SimConfig(params, PolicySpec(PolicyKind.ON_THE_SPOT), replications=3))
        assert all(m.tasks_expired == 0 for m in result.replications)

    def test_restrict_to_reduced_prunes(self, certain_ama_params):
        """Test excessive tasks are removed at no cost before the slot."""
        cfg = SimConfig(
            certain_ama_params,
            PolicySpec(PolicyKind.THRESHOLD, 10),
            replications=1,
            initial_state=S(2, 0, 0),
            restrict_to_reduced=True,
        )
        metrics = run(cfg).replications[0]
        assert metrics.tasks_pruned == 2
        assert metrics.total_cost == 0.0

    def test_record_series(self, no_arrival_params):
        cfg = SimConfig(
            no_arrival_params,
            PolicySpec(PolicyKind.EXPIRY_DRIVEN),
            replications=1,
            initial_state=S(2, 1, 0),
            record_series=True,
        )
        metrics = run(cfg).replications[0]
        assert metrics.slot_costs == [6.0, 3.0, 0.0]

    def test_initial_state_dimension(self, no_arrival_params):
        with pytest.raises(ValueError):
            SimConfig(no_arrival_params, PolicySpec("random"), initial_state=S(1, 0))


class TestSweepAndCompare:
    """Test cases for sweep_threshold / compare_policies."""

    def test_threshold_sweep_costs(self, certain_ama_params):
        """Test common-random-number sweep over B on a deterministic system."""
        cfg = SimConfig(
            certain_ama_params,
            PolicySpec(PolicyKind.THRESHOLD, 0),
            replications=2,
            initial_state=S(0, 2, 1),
        )
        best_B, results = sweep_threshold(cfg, range(4))
        costs = [results[B].summary["total_cost_mean"] for B in range(4)]
        assert costs == [3.0, 5.0, 7.0, 9.0]
        assert best_B == 0

    def test_empty_sweep(self, certain_ama_params):
        cfg = SimConfig(certain_ama_params, PolicySpec(PolicyKind.THRESHOLD, 0))
        with pytest.raises(ValueError):
            sweep_threshold(cfg, [])

    def test_compare_policies_keys(self, base_params):
        cfg = SimConfig(base_params.replace(T=20), PolicySpec("random"), replications=3)
        specs = [PolicySpec("optimal"), PolicySpec("on_the_spot"), PolicySpec("threshold", 2)]
        results = compare_policies(cfg, specs, PolicyEngine(cfg.params))
        assert list(results) == ["optimal", "on_the_spot", "threshold(B=2)"]

    def test_comparison_rejects_uncharged_pruning(self, base_params):
        """Test pruned tasks cannot silently favour one policy over another."""
        cfg = SimConfig(
            base_params.replace(T=20),
            PolicySpec("random"),
            replications=1,
            restrict_to_reduced=True,
        )
        with pytest.raises(ValueError, match="restrict_to_reduced"):
            compare_policies(cfg, [PolicySpec("optimal"), PolicySpec("on_the_spot")])
        with pytest.raises(ValueError, match="restrict_to_reduced"):
            sweep_threshold(cfg, range(3))

    def test_single_policy_may_prune(self, certain_ama_params):
        """Test a one-policy run or a one-value sweep still accepts pruning."""
        cfg = SimConfig(
            certain_ama_params,
            PolicySpec(PolicyKind.THRESHOLD, 10),
            replications=1,
            initial_state=S(2, 0, 0),
            restrict_to_reduced=True,
        )
        results = compare_policies(cfg, [PolicySpec(PolicyKind.THRESHOLD, 10)])
        assert results["threshold(B=10)"].replications[0].tasks_pruned == 2
        best_B, _ = sweep_threshold(cfg, [10])
        assert best_B == 10

    def test_pruning_would_hide_offload_cost(self, certain_ama_params):
        """Test the same start state costs C_o per excessive task once pruning is off."""
        kwargs = dict(replications=1, initial_state=S(2, 0, 0))
        spec = PolicySpec(PolicyKind.THRESHOLD, 10)
        pruned = run(SimConfig(certain_ama_params, spec, restrict_to_reduced=True, **kwargs))
        charged = run(SimConfig(certain_ama_params, spec, **kwargs))
        assert pruned.replications[0].total_cost == 0.0
        assert charged.replications[0].total_cost > 0.0

    @pytest.mark.slow
    def test_optimal_dominates_baselines(self, convex_params):
        """Test the optimal policy is no worse than any baseline within two standard errors."""
        params = convex_params.replace(T=400)
        cfg = SimConfig(params, PolicySpec("optimal"), replications=30)
        specs = [
            PolicySpec("optimal"),
            PolicySpec("threshold", 2),
            PolicySpec("expiry_driven"),
            PolicySpec("random"),
            PolicySpec("on_the_spot"),
        ]
        results = compare_policies(cfg, specs, PolicyEngine(params))
        optimal = results["optimal"].summary
        for name, result in results.items():
            other = result.summary
            slack = 2 * (optimal["cost_per_slot_stderr"] + other["cost_per_slot_stderr"])
            assert optimal["cost_per_slot_mean"] <= other["cost_per_slot_mean"] + slack, name


COMPARISON_MU = (0.1, 0.3, 0.5, 0.7, 0.9)
BASELINES = ("expiry_driven", "random", "on_the_spot")


@functools.lru_cache(maxsize=None)
def comparison_study(mu: float) -> Dict[str, List[float]]:
    """Per-replication cost per slot of every policy, 30 x 3400 slots on common seeds."""
    params = comparison_params(mu=mu, T=3400)
    cfg = SimConfig(params, PolicySpec("optimal"), replications=30, base_seed=11)
    specs = [PolicySpec("optimal")] + [PolicySpec(name) for name in BASELINES]
    results = compare_policies(cfg, specs, PolicyEngine(params))
    best_B, swept = sweep_threshold(cfg, range(7))
    results["threshold"] = swept[best_B]
    return {
        name: [m.cost_per_slot for m in result.replications]
        for name, result in results.items()
    }


def two_se(a: Sequence[float], b: Sequence[float]) -> float:
    se = MetricsCalculator().standard_error
    return 2 * math.sqrt(se(a) ** 2 + se(b) ** 2)


def paired_gap(mu: float, baseline: str) -> Tuple[float, float]:
    """Mean and standard error of baseline minus optimal, replication by replication."""
    study = comparison_study(mu)
    diffs = np.subtract(study[baseline], study["optimal"])
    calculator = MetricsCalculator()
    return calculator.mean(diffs), calculator.standard_error(diffs)


@pytest.mark.slow
class TestComparisonStudy:
    """Optimal against every baseline over the local service grid."""

    @pytest.mark.parametrize("mu", COMPARISON_MU)
    def test_cost_ordering(self, mu):
        """Test Optimal <= best Threshold <= max(ED, Random) within two standard errors."""
        study = comparison_study(mu)
        mean = MetricsCalculator().mean
        assert len(study["optimal"]) * 3400 >= 100_000
        optimal, threshold = study["optimal"], study["threshold"]
        assert mean(optimal) <= mean(threshold) + two_se(optimal, threshold)
        worst = max(("expiry_driven", "random"), key=lambda name: mean(study[name]))
        assert mean(threshold) <= mean(study[worst]) + two_se(threshold, study[worst])
        for name in BASELINES:
            assert mean(optimal) <= mean(study[name]) + two_se(optimal, study[name]), name

    @pytest.mark.parametrize("mu", [mu for mu in COMPARISON_MU if mu <= 0.5])
    def test_optimal_separates_from_random(self, mu):
        """Test the 95% intervals of Optimal and Random do not overlap under congestion."""
        study = comparison_study(mu)
        calculator = MetricsCalculator()
        assert not calculator.intervals_overlap(study["optimal"], study["random"])
        assert calculator.mean(study["optimal"]) < calculator.mean(study["random"])

    @pytest.mark.parametrize("baseline", ["expiry_driven", "random"])
    def test_gaps_shrink_with_local_service(self, baseline):
        """Test the advantage over a baseline never grows as mu increases."""
        gaps = [paired_gap(mu, baseline) for mu in COMPARISON_MU]
        for (low_mu, (gap, se)), (high_mu, (next_gap, next_se)) in zip(
            zip(COMPARISON_MU, gaps), zip(COMPARISON_MU[1:], gaps[1:])
        ):
            slack = 2 * math.sqrt(se**2 + next_se**2)
            assert next_gap <= gap + slack, (baseline, low_mu, high_mu)


@pytest.mark.slow
class TestOnTheSpotRatio:
    """On-the-spot against Optimal with fast local service and few empty slots."""

    @pytest.fixture(scope="class")
    def results(self):
        params = comparison_params(N=5, mu=0.9, T=300, p0=0.1)
        cfg = SimConfig(params, PolicySpec("optimal"), replications=10, base_seed=3)
        specs = [PolicySpec("optimal"), PolicySpec("on_the_spot")]
        return compare_policies(cfg, specs, PolicyEngine(params))

    def test_on_the_spot_costs_more_per_task(self, results):
        optimal = [m.cost_per_task for m in results["optimal"].replications]
        on_the_spot = [m.cost_per_task for m in results["on_the_spot"].replications]
        mean = MetricsCalculator().mean
        assert mean(on_the_spot) >= mean(optimal) - two_se(on_the_spot, optimal)

    def test_on_the_spot_uses_local_server_less(self, results):
        optimal = [m.local_utilisation for m in results["optimal"].replications]
        on_the_spot = [m.local_utilisation for m in results["on_the_spot"].replications]
        mean = MetricsCalculator().mean
        assert mean(on_the_spot) <= mean(optimal) + two_se(on_the_spot, optimal)
