"""
Runner module for executing offloading experiments.
Orchestrates one validated config from solver/simulator calls to artifacts.
"""

import itertools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from artifacts import ArtifactWriter, state_columns, state_record
from config import Settings, config_hash, state_of
from dp import TopDownSolver
from errors import InvariantViolation
from leaderboard import PolicyLeaderboard
from metrics import MetricsCalculator
from model import ModelParams, SystemState, offload_vector
from oracle import OracleConfig, find_reading_discrepancy, oracle_solve, small_states
from policy import Direction, PolicyEngine, SliceSpec, infer_from_adjacent
from reduction import enumerate_lean, enumerate_reduced
from sim import (
    PolicyKind,
    PolicySpec,
    SimConfig,
    SimResult,
    compare_policies,
    sweep_threshold,
)

logger = logging.getLogger(__name__)

CONVEXITY_TOLERANCE = 1e-9
VALUE_TOLERANCE = 1e-9


def _policy_slug(spec: PolicySpec) -> str:
    if spec.kind is PolicyKind.THRESHOLD:
        return f"threshold_B{spec.B}"
    return spec.kind.value


def _mu_label(mu: float) -> str:
    return f"{mu:g}"


class ExperimentRunner:
    """Runs one experiment config and writes its artifacts."""

    def __init__(
        self,
        config,
        out_dir: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        settings: Optional[Settings] = None,
    ):
        """
        Initialize the experiment runner.

        Args:
            config: Validated experiment model (see config.validate_config)
            out_dir: Output directory; defaults to config.output, then results/<kind>
            seed: Base seed overriding config.seed
            threads: Worker threads overriding config.threads (0 = auto)
            settings: Environment defaults
        """
        self.settings = settings or Settings.from_env()
        self.config = config
        self.kind = config.kind
        self.params: ModelParams = config.model_params()
        self.seed = config.seed if seed is None else seed
        if threads is None:
            threads = config.threads if config.threads is not None else self.settings.threads
        self.threads = threads
        if out_dir is None:
            out_dir = config.output or Path(self.settings.results_dir) / self.kind
        self.out_dir = Path(out_dir)
        self.writer: Optional[ArtifactWriter] = None
        self._engine: Optional[PolicyEngine] = None

    @property
    def engine(self) -> PolicyEngine:
        if self._engine is None:
            self._engine = PolicyEngine(self.params)
        return self._engine

    def _banner(self, text: str) -> None:
        print(f"\n{'=' * 60}")
        print(text)
        print(f"{'=' * 60}\n")

    def _config_echo(self) -> Dict[str, Any]:
        return self.config.model_dump(mode="json")

    def run(self) -> List[Path]:
        """
        Execute the experiment.

        Returns:
            Paths of the written artifacts (sidecar included)
        """
        handlers: Dict[str, Callable[[], None]] = {
            "solve": self.run_solve,
            "decision_map": self.run_decision_map,
            "convexity": self.run_convexity,
            "adjacency_chain": self.run_adjacency_chain,
            "memory_study": self.run_memory_study,
            "simulate": self.run_simulate,
            "sweep_threshold": self.run_sweep_threshold,
            "oracle_check": self.run_oracle_check,
            "enumerate": self.run_enumerate,
        }
        self.writer = ArtifactWriter(self.out_dir, self.kind, config_hash(self.config), self.seed)
        self._banner(f"Running {self.kind} experiment -> {self.out_dir}")
        try:
            handlers[self.kind]()
            self.writer.write_sidecar({"threads": self.threads})
        except BaseException:
            logger.error("%s failed; removing partial outputs", self.kind)
            self.writer.cleanup()
            raise
        self._banner(f"Experiment complete! {len(self.writer.written)} file(s) in {self.out_dir}")
        return list(self.writer.written)

    # -- decision experiments ------------------------------------------------

    def run_solve(self) -> None:
        horizon = self.config.horizon()
        solver = self.engine.solver
        solver.solve_through(horizon)
        states = [state_of(c, self.params.N) for c in self.config.options.states]
        if not states:
            states = solver.keys_for(horizon)
        rows = []
        for s in states:
            decision = self.engine.decide(s, horizon)
            rows.append(
                {
                    **state_record(s),
                    "horizon": horizon,
                    "value": solver.value(s, horizon),
                    "value_without_ama": solver.value_without_ama(s, horizon),
                    "L_star": decision.L_star,
                }
            )
            print(f"  {s}: L* = {decision.L_star}, J = {rows[-1]['value']:.6f}")
        columns = state_columns(self.params.N) + ["horizon", "value", "value_without_ama", "L_star"]
        self.writer.write_csv("solve.csv", rows, columns)
        self.writer.write_json("memo_stats.json", {"memo": self.engine.stats()})

    def run_decision_map(self) -> None:
        horizon = self.config.horizon()
        for index, spec in enumerate(self.config.options.slices):
            fixed = dict(spec.fixed)
            slice_spec = SliceSpec(
                N=self.params.N,
                x=spec.x,
                y=spec.y,
                x_values=range(spec.x_max + 1),
                y_values=range(spec.y_max + 1),
                fixed=fixed,
            )
            cells = self.engine.decision_map(slice_spec, horizon)
            x_col, y_col = f"n_{spec.x}", f"n_{spec.y}"
            rows = [
                {x_col: c.n_x, y_col: c.n_y, "L_star": c.L_star, "class": c.label} for c in cells
            ]
            suffix = "_".join(f"n{k}-{v}" for k, v in sorted(fixed.items()))
            name = f"decision_map_{index}" + (f"_{suffix}" if suffix else "") + ".csv"
            self.writer.write_csv(name, rows, [x_col, y_col, "L_star", "class"])
            non_offloading = [str(c.state) for c in cells if c.L_star == 0]
            print(f"  slice {index} {fixed}: non-offloading states {', '.join(non_offloading)}")

    def run_convexity(self) -> None:
        horizon = self.config.horizon()
        solver = self.engine.solver
        solver.solve_through(horizon)
        rows, minima = [], []
        for s in (state_of(c, self.params.N) for c in self.config.options.states):
            L_star = solver.optimal_decision(s, horizon)
            curve = [(L, solver.f_function(s, L, horizon)) for L in solver.f_domain(s)]
            for (_, a), (_, b), (L, c) in zip(curve, curve[1:], curve[2:]):
                if a + c < 2.0 * b - CONVEXITY_TOLERANCE:
                    raise InvariantViolation(f"F({s}, .) is not convex around L={L - 1}")
            for L, F in curve:
                rows.append({**state_record(s), "L": L, "F": F, "is_min": L == L_star})
            minima.append({"state": str(s), "L_star": L_star})
            print(f"  {s}: minimum at L = {L_star} over {len(curve)} points")
        columns = state_columns(self.params.N) + ["L", "F", "is_min"]
        self.writer.write_csv("convexity.csv", rows, columns)
        self.writer.write_json("minima.json", {"horizon": horizon, "minima": minima})

    def run_adjacency_chain(self) -> None:
        """Walk each state down its most-imminent-removal chain and check each link."""
        horizon = self.config.horizon()
        self.engine.solver.solve_through(horizon)
        rows, mismatches = [], 0
        for chain, counts in enumerate(self.config.options.states):
            state = state_of(counts, self.params.N)
            previous = None
            for step in range(state.total + 1):
                L_star = self.engine.decide(state, horizon).L_star
                inferred = (
                    L_star if previous is None else infer_from_adjacent(previous, Direction.DOWN)
                )
                consistent = inferred == L_star
                mismatches += not consistent
                rows.append(
                    {
                        "chain": chain,
                        "step": step,
                        **state_record(state),
                        "L_star": L_star,
                        "inferred": inferred,
                        "consistent": consistent,
                    }
                )
                previous = L_star
                if not state.is_empty:
                    state = offload_vector(state, 1)
        columns = ["chain", "step"] + state_columns(self.params.N)
        columns += ["L_star", "inferred", "consistent"]
        self.writer.write_csv("adjacency_chain.csv", rows, columns)
        if mismatches:
            logger.warning("%d chain link(s) disagree with the adjacency rule", mismatches)
        print(f"  {len(rows)} chain states, {mismatches} inconsistent link(s)")

    # -- memory ----------------------------------------------------------------

    def _study_params(self, N: int) -> ModelParams:
        p0 = self.params.arrival[0]
        return ModelParams.with_uniform_arrival(
            N=N,
            T=self.params.T,
            p_a=self.params.p_a,
            mu=self.params.mu,
            p0=p0,
            C_o=self.params.C_o,
            C_p=self.params.C_p,
        )

    def run_memory_study(self) -> None:
        """
        Memo entries needed to answer every box state at horizons 1..T,
        with and without the lean transform.
        """
        options = self.config.options
        horizon = self.config.horizon()
        rows = []
        for N in options.N_values:
            params = self._study_params(N)
            box = [SystemState(c) for c in itertools.product(range(options.box_max + 1), repeat=N)]
            lean_solver = TopDownSolver(params, use_lean=True)
            generic_solver = TopDownSolver(params, use_lean=False)
            for h in range(1, horizon + 1):
                for s in box:
                    lean_solver.value(s, h)
                    generic_solver.value(s, h)
                generic = len(generic_solver.memo)
                lean = len(lean_solver.memo)
                rows.append(
                    {
                        "N": N,
                        "horizon": h,
                        "generic_entries": generic,
                        "lean_entries": lean,
                        "reduction": 1.0 - lean / generic,
                    }
                )
            logger.info("memory study N=%d: %d lean entries at horizon %d", N, lean, horizon)
            reduction = rows[-1]["reduction"]
            print(f"  N={N}: {generic} generic vs {lean} lean entries ({reduction:.1%})")
        columns = ["N", "horizon", "generic_entries", "lean_entries", "reduction"]
        self.writer.write_csv("memory_study.csv", rows, columns)

    # -- simulation --------------------------------------------------------------

    def _sim_config(self, params: ModelParams, options) -> SimConfig:
        initial = None
        if options.initial_state is not None:
            initial = SystemState(tuple(options.initial_state))
        return SimConfig(
            params=params,
            policy=PolicySpec(PolicyKind.EXPIRY_DRIVEN),
            replications=options.replications,
            base_seed=self.seed,
            initial_state=initial,
            restrict_to_reduced=options.restrict_to_reduced,
            record_series=getattr(options, "record_series", False),
        )

    def _write_replications(self, name: str, result: SimResult) -> None:
        rows = [m.as_row() for m in result.replications]
        self.writer.write_csv(name, rows, list(rows[0].keys()))

    def _summary_row(self, mu: float, result: SimResult) -> Dict[str, Any]:
        row = {"mu": mu, "policy": result.name}
        for metric in ("cost_per_task", "cost_per_slot", "local_utilisation"):
            for stat in ("mean", "ci_low", "ci_high"):
                row[f"{metric}_{stat}"] = result.summary[f"{metric}_{stat}"]
        return row

    def run_simulate(self) -> None:
        options = self.config.options
        mu_values = options.mu_values or [self.params.mu]
        summary_rows, thresholds, ratios = [], {}, {}
        for mu in mu_values:
            params = self.params.replace(mu=mu)
            base = self._sim_config(params, options)
            specs: List[PolicySpec] = []
            results: Dict[str, SimResult] = {}
            for policy in options.policies:
                if policy.name is PolicyKind.THRESHOLD and policy.B is None:
                    best_B, swept = sweep_threshold(base, options.threshold_range, self.threads)
                    thresholds[_mu_label(mu)] = best_B
                    spec = PolicySpec(PolicyKind.THRESHOLD, best_B)
                    results[spec.name] = swept[best_B]
                else:
                    spec = PolicySpec(policy.name, policy.B)
                specs.append(spec)
            needs_engine = any(s.kind is PolicyKind.OPTIMAL for s in specs)
            engine = PolicyEngine(params) if needs_engine else None
            pending = [s for s in specs if s.name not in results]
            results.update(compare_policies(base, pending, engine, self.threads))

            for spec in specs:
                result = results[spec.name]
                self._write_replications(f"sim_mu{_mu_label(mu)}_{_policy_slug(spec)}.csv", result)
                summary_rows.append(self._summary_row(mu, result))
                if options.record_series:
                    series = [
                        {"replication": m.replication, "slot": t, "cost": cost}
                        for m in result.replications
                        for t, cost in enumerate(m.slot_costs)
                    ]
                    self.writer.write_csv(
                        f"series_mu{_mu_label(mu)}_{_policy_slug(spec)}.csv",
                        series,
                        ["replication", "slot", "cost"],
                    )

            board = PolicyLeaderboard([results[s.name] for s in specs])
            board.print_leaderboard(f"POLICY LEADERBOARD (mu = {mu:g})")
            if "on_the_spot" in results and "optimal" in results:
                comparison = board.get_policy_comparison("on_the_spot", "optimal")
                ratios[_mu_label(mu)] = {
                    "ots_over_optimal_cost_per_task": comparison["cost_per_task_ratio"],
                    "utilisation_gap": comparison["utilisation_gap"],
                }

        columns = list(summary_rows[0].keys())
        self.writer.write_csv("summary.csv", summary_rows, columns)
        self.writer.write_json(
            "summary.json",
            {
                "config": self._config_echo(),
                "runs": summary_rows,
                "best_threshold": thresholds,
                "on_the_spot_vs_optimal": ratios,
                "confidence": MetricsCalculator().confidence,
            },
        )

    def run_sweep_threshold(self) -> None:
        options = self.config.options
        base = self._sim_config(self.params, options)
        best_B, results = sweep_threshold(base, options.B_values, self.threads)
        rows = []
        for B in options.B_values:
            summary = results[B].summary
            rows.append(
                {
                    "B": B,
                    "total_cost_mean": summary["total_cost_mean"],
                    "cost_per_slot_mean": summary["cost_per_slot_mean"],
                    "cost_per_slot_ci_low": summary["cost_per_slot_ci_low"],
                    "cost_per_slot_ci_high": summary["cost_per_slot_ci_high"],
                    "cost_per_task_mean": summary["cost_per_task_mean"],
                    "best": B == best_B,
                }
            )
        self.writer.write_csv("sweep_threshold.csv", rows, list(rows[0].keys()))
        self.writer.write_json(
            "summary.json", {"config": self._config_echo(), "best_B": best_B, "runs": rows}
        )
        PolicyLeaderboard([results[B] for B in options.B_values]).print_leaderboard(
            "THRESHOLD SWEEP"
        )

    # -- verification ------------------------------------------------------------

    def run_oracle_check(self) -> None:
        options = self.config.options
        oracle_cfg = OracleConfig(
            max_total_tasks=options.max_total, idle_branch_reading=options.idle_branch_reading
        )
        solver = self.engine.solver
        rows, disagreements = [], []
        for h in sorted(set(options.horizons)):
            solver.solve_through(h)
            for s in small_states(self.params.N, options.max_total):
                dp_value = solver.value(s, h)
                dp_L = solver.optimal_decision(s, h)
                exact, exact_L = oracle_solve(s, h, self.params, oracle_cfg)
                agree = abs(dp_value - exact) <= VALUE_TOLERANCE and dp_L == exact_L
                rows.append(
                    {
                        **state_record(s),
                        "horizon": h,
                        "dp_value": dp_value,
                        "oracle_value": exact,
                        "dp_L": dp_L,
                        "oracle_L": exact_L,
                        "agree": agree,
                    }
                )
                if not agree:
                    disagreements.append((s, h))
        columns = state_columns(self.params.N)
        columns += ["horizon", "dp_value", "oracle_value", "dp_L", "oracle_L", "agree"]
        self.writer.write_csv("oracle_check.csv", rows, columns)
        print(f"  {len(rows)} (state, horizon) pairs, {len(disagreements)} disagreement(s)")

        if options.diff_search:
            found = find_reading_discrepancy(
                self.params, max_total=min(options.max_total, 2), max_horizon=max(options.horizons)
            )
            record = None
            if found is not None:
                state, h, corrected, literal = found
                record = {
                    "state": list(state.counts),
                    "horizon": h,
                    "corrected": corrected,
                    "literal": literal,
                }
            self.writer.write_json("reading_discrepancy.json", {"discrepancy": record})

        if disagreements and options.idle_branch_reading.value == "corrected":
            s, h = disagreements[0]
            raise InvariantViolation(
                f"DP and oracle disagree on {len(disagreements)} case(s), first at {s}, horizon {h}"
            )

    def run_enumerate(self) -> None:
        N = self.params.N
        horizon = self.config.horizon()
        reduced = [state_record(s) for s in enumerate_reduced(N)]
        lean = [state_record(s) for s in enumerate_lean(N, horizon)]
        self.writer.write_csv("reduced_states.csv", reduced, state_columns(N))
        self.writer.write_csv("lean_keys.csv", lean, state_columns(N))
        print(f"  N={N}: {len(reduced)} reduced states, {len(lean)} lean keys at horizon {horizon}")
