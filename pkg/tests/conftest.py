"""
Pytest configuration and shared fixtures.
"""

import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from model import ModelParams  # noqa: E402

GOLDEN_DIR = Path(__file__).parent / "golden"
CONFIGS_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def base_params():
    """Reference three-deadline parameters with a short horizon."""
    return ModelParams.with_uniform_arrival(N=3, T=4, p_a=0.7, mu=0.7, p0=0.5, C_o=1.0, C_p=3.0)


@pytest.fixture
def convex_params():
    """Variant-a convexity parameters with a short horizon."""
    return ModelParams.with_uniform_arrival(N=5, T=6, p_a=0.5, mu=0.5, p0=0.5, C_o=1.0, C_p=3.0)


@pytest.fixture
def small_params():
    """Two-deadline system for exhaustive checks."""
    return ModelParams.with_uniform_arrival(N=2, T=3, p_a=0.6, mu=0.4, p0=0.4, C_o=1.0, C_p=2.5)


@pytest.fixture
def no_arrival_params():
    """No AMA, no local service, no arrivals: every queued task expires."""
    return ModelParams(
        N=3, T=3, p_a=0.0, mu=0.0, arrival=(1.0, 0.0, 0.0, 0.0), C_o=1.0, C_p=3.0
    )


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture
def configs_dir():
    return CONFIGS_DIR


@pytest.fixture
def solve_yaml():
    """A valid solve config on the reference parameters."""
    return """
kind: solve
params:
  N: 3
  T: 4
  p_a: 0.7
  mu: 0.7
  arrival: {p0: 0.5}
  C_o: 1.0
  C_p: 3.0
options:
  states:
    - [0, 0, 1]
    - [0, 0, 2]
"""
