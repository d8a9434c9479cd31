"""
Metrics module for summarizing Monte Carlo replications.
Provides replication means, normal-approximation confidence intervals and
the per-run ratios reported by the simulator.
"""

from typing import Dict, List, Sequence

import numpy as np
from scipy import stats


class MetricsCalculator:
    """Summary statistics over independent replication results."""

    def __init__(self, confidence: float = 0.95):
        """
        Initialize the calculator.

        Args:
            confidence: Two-sided confidence level for intervals
        """
        if not 0.0 < confidence < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
        self.confidence = confidence
        self.z = float(stats.norm.ppf(0.5 + confidence / 2.0))

    def mean(self, values: Sequence[float]) -> float:
        # np.sum uses pairwise summation, so the result does not depend on thread scheduling
        array = np.asarray(values, dtype=float)
        return float(np.sum(array) / len(array))

    def standard_error(self, values: Sequence[float]) -> float:
        array = np.asarray(values, dtype=float)
        if len(array) < 2:
            return 0.0
        return float(np.std(array, ddof=1) / np.sqrt(len(array)))

    def confidence_interval(self, values: Sequence[float]) -> Dict[str, float]:
        """
        Normal-approximation interval around the replication mean.

        Args:
            values: One value per replication

        Returns:
            Dictionary with mean, stderr, ci_low and ci_high
        """
        center = self.mean(values)
        half_width = self.z * self.standard_error(values)
        return {
            "mean": center,
            "stderr": self.standard_error(values),
            "ci_low": center - half_width,
            "ci_high": center + half_width,
        }

    def aggregate_scores(self, scores: List[Dict[str, float]]) -> Dict[str, float]:
        """
        Aggregate per-replication metric dictionaries into summary statistics.

        Args:
            scores: List of metric dictionaries, one per replication

        Returns:
            Dictionary with mean, stderr, CI bounds, min and max for each metric
        """
        if not scores:
            return {}

        metric_keys = sorted({key for score in scores for key in score})
        aggregated = {"replications": float(len(scores))}
        for key in metric_keys:
            values = [s.get(key, 0.0) for s in scores]
            interval = self.confidence_interval(values)
            aggregated[f"{key}_mean"] = interval["mean"]
            aggregated[f"{key}_stderr"] = interval["stderr"]
            aggregated[f"{key}_ci_low"] = interval["ci_low"]
            aggregated[f"{key}_ci_high"] = interval["ci_high"]
            aggregated[f"{key}_min"] = float(np.min(values))
            aggregated[f"{key}_max"] = float(np.max(values))
        return aggregated

    @staticmethod
    def safe_ratio(numerator: float, denominator: float) -> float:
        return float(numerator) / float(denominator) if denominator else 0.0

    def intervals_overlap(self, a: Sequence[float], b: Sequence[float]) -> bool:
        ia, ib = self.confidence_interval(a), self.confidence_interval(b)
        return ia["ci_low"] <= ib["ci_high"] and ib["ci_low"] <= ia["ci_high"]


# Convenience functions for standalone usage
_calculator = None


def get_calculator() -> MetricsCalculator:
    """Get or create singleton metrics calculator."""
    global _calculator
    if _calculator is None:
        _calculator = MetricsCalculator()
    return _calculator


def confidence_interval(values: Sequence[float]) -> Dict[str, float]:
    """95% interval around the mean of replication values."""
    return get_calculator().confidence_interval(values)


def aggregate_scores(scores: List[Dict[str, float]]) -> Dict[str, float]:
    """Summary statistics for a list of per-replication metrics."""
    return get_calculator().aggregate_scores(scores)
