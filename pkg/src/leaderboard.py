"""
Leaderboard module for ranking simulated offloading policies.
"""

from typing import Any, Dict, List

from tabulate import tabulate

from metrics import MetricsCalculator
from sim import SimResult


class PolicyLeaderboard:
    """Ranks policy runs that share common random numbers."""

    def __init__(self, results: List[SimResult]):
        """
        Initialize the leaderboard.

        Args:
            results: Simulation results, one per policy
        """
        self.results = list(results)
        self.calculator = MetricsCalculator()

    def get_leaderboard_data(self) -> List[Dict[str, Any]]:
        """
        Get leaderboard rows sorted by mean cost per task (lowest first).

        Returns:
            List of policy summaries with rankings
        """
        leaderboard = []
        for result in self.results:
            summary = result.summary
            leaderboard.append(
                {
                    "policy": result.name,
                    "cost_per_task": summary.get("cost_per_task_mean", 0.0),
                    "cost_per_task_ci_low": summary.get("cost_per_task_ci_low", 0.0),
                    "cost_per_task_ci_high": summary.get("cost_per_task_ci_high", 0.0),
                    "cost_per_slot": summary.get("cost_per_slot_mean", 0.0),
                    "local_utilisation": summary.get("local_utilisation_mean", 0.0),
                    "replications": int(summary.get("replications", 0)),
                }
            )

        # Stable sort keeps input order for exact ties
        leaderboard.sort(key=lambda entry: entry["cost_per_task"])
        for idx, entry in enumerate(leaderboard, 1):
            entry["rank"] = idx
        return leaderboard

    def print_leaderboard(self, title: str = "POLICY LEADERBOARD") -> None:
        """Print a formatted leaderboard table to console."""
        leaderboard = self.get_leaderboard_data()
        if not leaderboard:
            print("No simulation results available.")
            return

        table_data = [
            [
                entry["rank"],
                entry["policy"],
                f"{entry['cost_per_task']:.4f}",
                f"[{entry['cost_per_task_ci_low']:.4f}, {entry['cost_per_task_ci_high']:.4f}]",
                f"{entry['cost_per_slot']:.4f}",
                f"{entry['local_utilisation']:.3f}",
            ]
            for entry in leaderboard
        ]
        headers = ["Rank", "Policy", "Cost/Task", "95% CI", "Cost/Slot", "Local Util."]

        print("\n" + "=" * 80)
        print(title)
        print("=" * 80 + "\n")
        print(tabulate(table_data, headers=headers, tablefmt="grid"))
        print()

    def get_policy_comparison(self, policy1: str, policy2: str) -> Dict[str, Any]:
        """
        Compare two policies side-by-side.

        Args:
            policy1: Name of the first policy (e.g. "on_the_spot")
            policy2: Name of the second policy (e.g. "optimal")

        Returns:
            Comparison dictionary with the cost-per-task ratio and utilisation gap
        """
        by_name = {result.name: result for result in self.results}
        first, second = by_name.get(policy1), by_name.get(policy2)
        if first is None or second is None:
            return {"error": "One or both policies not found"}

        s1, s2 = first.summary, second.summary
        cost1 = [m.cost_per_task for m in first.replications]
        cost2 = [m.cost_per_task for m in second.replications]
        return {
            "policy1": policy1,
            "policy2": policy2,
            "cost_per_task_ratio": self.calculator.safe_ratio(
                s1["cost_per_task_mean"], s2["cost_per_task_mean"]
            ),
            "utilisation_gap": s2["local_utilisation_mean"] - s1["local_utilisation_mean"],
            "differences": {
                metric: s1[f"{metric}_mean"] - s2[f"{metric}_mean"]
                for metric in ["cost_per_task", "cost_per_slot", "local_utilisation"]
            },
            "cost_intervals_overlap": self.calculator.intervals_overlap(cost1, cost2),
        }
