"""Offload DP - finite-horizon task offloading solver, checks and simulator."""
