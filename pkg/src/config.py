"""
Experiment configuration: YAML files validated by pydantic models.

One file describes one experiment. ``validate_config`` reports every
violation it finds, each with a dotted field path, and the canonical form
(sorted YAML of the validated model) is what the artifact hash is taken over.
"""

import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator
from typing_extensions import Annotated

from errors import ConfigError, Violation
from model import PROBABILITY_TOLERANCE, ModelParams, SystemState
from oracle import IdleBranchReading
from sim import PolicyKind

try:
    from dotenv import load_dotenv

    load_dotenv()
except ImportError:
    pass  # environment variables still work without a .env file

UINT64_MAX = 2**64 - 1

KINDS = (
    "solve",
    "decision_map",
    "convexity",
    "adjacency_chain",
    "memory_study",
    "simulate",
    "sweep_threshold",
    "oracle_check",
    "enumerate",
)


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults read from the environment (and .env when present)."""

    log_level: str = "INFO"
    results_dir: str = "results"
    threads: int = 0

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            log_level=os.getenv("OFFLOAD_LOG_LEVEL", "INFO").upper(),
            results_dir=os.getenv("OFFLOAD_RESULTS_DIR", "results"),
            threads=int(os.getenv("OFFLOAD_THREADS", "0")),
        )


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArrivalShorthand(_Strict):
    """p_0 given, the rest spread evenly over deadlines 1..N."""

    p0: float = Field(ge=0.0, le=1.0)


class ParamsModel(_Strict):
    N: int = Field(ge=1)
    T: int = Field(ge=1)
    p_a: float = Field(ge=0.0, le=1.0)
    mu: float = Field(ge=0.0, le=1.0)
    arrival: List[float]
    C_o: float = Field(gt=0.0)
    C_p: float

    @field_validator("arrival", mode="before")
    @classmethod
    def expand_shorthand(cls, value, info):
        if isinstance(value, dict):
            shorthand = ArrivalShorthand.model_validate(value)
            N = info.data.get("N")
            if N is None:
                raise ValueError("the {p0: ...} shorthand needs a valid N")
            return [shorthand.p0] + [(1.0 - shorthand.p0) / N] * N
        return value

    @field_validator("arrival")
    @classmethod
    def check_distribution(cls, value, info):
        N = info.data.get("N")
        if N is not None and len(value) != N + 1:
            raise ValueError(f"expected N+1 = {N + 1} probabilities (p_0..p_N), got {len(value)}")
        if any(not 0.0 <= p <= 1.0 for p in value):
            raise ValueError("every arrival probability must lie in [0, 1]")
        total = math.fsum(value)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"arrival probabilities must sum to 1, got {total!r}")
        return value

    @field_validator("C_p")
    @classmethod
    def check_penalty(cls, value, info):
        C_o = info.data.get("C_o")
        if C_o is not None and not value > C_o:
            raise ValueError(f"the model assumes C_p > C_o (got C_p={value}, C_o={C_o})")
        return value

    def to_model(self) -> ModelParams:
        return ModelParams(
            N=self.N,
            T=self.T,
            p_a=self.p_a,
            mu=self.mu,
            arrival=tuple(self.arrival),
            C_o=self.C_o,
            C_p=self.C_p,
        )


Counts = List[Annotated[int, Field(ge=0)]]


class SolveOptions(_Strict):
    states: List[Counts] = Field(default_factory=list)
    horizon: Optional[int] = Field(default=None, ge=1)


class SliceModel(_Strict):
    x: int = Field(default=1, ge=1)
    y: int = Field(default=2, ge=1)
    x_max: int = Field(default=3, ge=0)
    y_max: int = Field(default=3, ge=0)
    fixed: Dict[int, Annotated[int, Field(ge=0)]] = Field(default_factory=dict)


class DecisionMapOptions(_Strict):
    slices: List[SliceModel] = Field(min_length=1)
    horizon: Optional[int] = Field(default=None, ge=1)


class ConvexityOptions(_Strict):
    states: List[Counts] = Field(min_length=1)
    horizon: Optional[int] = Field(default=None, ge=1)


class AdjacencyChainOptions(_Strict):
    states: List[Counts] = Field(min_length=1)
    horizon: Optional[int] = Field(default=None, ge=1)


class MemoryStudyOptions(_Strict):
    N_values: List[Annotated[int, Field(ge=1, le=6)]] = Field(default_factory=lambda: [3, 4, 5])
    box_max: int = Field(default=4, ge=0)
    horizon: Optional[int] = Field(default=None, ge=1)


class PolicyModel(_Strict):
    name: PolicyKind
    B: Optional[int] = Field(default=None, ge=0)


def _all_policies() -> List[PolicyModel]:
    return [PolicyModel(name=kind) for kind in PolicyKind]


class SimulateOptions(_Strict):
    policies: List[PolicyModel] = Field(default_factory=_all_policies, min_length=1)
    replications: int = Field(default=30, ge=1)
    initial_state: Optional[Counts] = None
    restrict_to_reduced: bool = False
    mu_values: Optional[List[Annotated[float, Field(ge=0.0, le=1.0)]]] = None
    threshold_range: List[Annotated[int, Field(ge=0)]] = Field(
        default_factory=lambda: list(range(0, 11)), min_length=1
    )
    record_series: bool = False


class SweepThresholdOptions(_Strict):
    B_values: List[Annotated[int, Field(ge=0)]] = Field(min_length=1)
    replications: int = Field(default=30, ge=1)
    initial_state: Optional[Counts] = None
    restrict_to_reduced: bool = False


class OracleCheckOptions(_Strict):
    max_total: int = Field(default=4, ge=0)
    horizons: List[Annotated[int, Field(ge=1, le=6)]] = Field(default_factory=lambda: [1, 2, 3])
    idle_branch_reading: IdleBranchReading = IdleBranchReading.CORRECTED
    diff_search: bool = False


class EnumerateOptions(_Strict):
    horizon: Optional[int] = Field(default=None, ge=1)


class _ExperimentBase(_Strict):
    params: ParamsModel
    seed: int = Field(default=0, ge=0, le=UINT64_MAX)
    threads: Optional[int] = Field(default=None, ge=0)
    output: Optional[str] = None
    description: str = ""

    def model_params(self) -> ModelParams:
        return self.params.to_model()

    def horizon(self) -> int:
        options_horizon = getattr(self.options, "horizon", None)
        return options_horizon if options_horizon is not None else self.params.T


class SolveExperiment(_ExperimentBase):
    kind: Literal["solve"]
    options: SolveOptions = Field(default_factory=SolveOptions)


class DecisionMapExperiment(_ExperimentBase):
    kind: Literal["decision_map"]
    options: DecisionMapOptions


class ConvexityExperiment(_ExperimentBase):
    kind: Literal["convexity"]
    options: ConvexityOptions


class AdjacencyChainExperiment(_ExperimentBase):
    kind: Literal["adjacency_chain"]
    options: AdjacencyChainOptions


class MemoryStudyExperiment(_ExperimentBase):
    kind: Literal["memory_study"]
    options: MemoryStudyOptions = Field(default_factory=MemoryStudyOptions)


class SimulateExperiment(_ExperimentBase):
    kind: Literal["simulate"]
    options: SimulateOptions = Field(default_factory=SimulateOptions)


class SweepThresholdExperiment(_ExperimentBase):
    kind: Literal["sweep_threshold"]
    options: SweepThresholdOptions


class OracleCheckExperiment(_ExperimentBase):
    kind: Literal["oracle_check"]
    options: OracleCheckOptions = Field(default_factory=OracleCheckOptions)


class EnumerateExperiment(_ExperimentBase):
    kind: Literal["enumerate"]
    options: EnumerateOptions = Field(default_factory=EnumerateOptions)


ExperimentConfig = Annotated[
    Union[
        SolveExperiment,
        DecisionMapExperiment,
        ConvexityExperiment,
        AdjacencyChainExperiment,
        MemoryStudyExperiment,
        SimulateExperiment,
        SweepThresholdExperiment,
        OracleCheckExperiment,
        EnumerateExperiment,
    ],
    Field(discriminator="kind"),
]

_ADAPTER = TypeAdapter(ExperimentConfig)


def _path(loc, kind: Optional[str]) -> str:
    parts = list(loc)
    if parts and kind is not None and parts[0] == kind:
        parts = parts[1:]
    return ".".join(str(p) for p in parts) or "kind"


def _pydantic_violations(exc: ValidationError, kind: Optional[str]) -> List[Violation]:
    violations = []
    for error in exc.errors():
        message = error["msg"]
        if message.startswith("Value error, "):
            message = message[len("Value error, ") :]
        violations.append(Violation(_path(error["loc"], kind), message))
    return violations


def _dimension_violations(data: Dict[str, Any]) -> List[Violation]:
    """State vectors and slice axes must agree with params.N."""
    params = data.get("params")
    N = params.get("N") if isinstance(params, dict) else None
    if not isinstance(N, int) or isinstance(N, bool) or N < 1:
        return []
    options = data.get("options")
    if not isinstance(options, dict):
        return []
    violations = []
    states = options.get("states")
    if isinstance(states, list):
        for i, state in enumerate(states):
            if isinstance(state, list) and len(state) != N:
                violations.append(
                    Violation(f"options.states.{i}", f"expected {N} counts, got {len(state)}")
                )
    initial = options.get("initial_state")
    if isinstance(initial, list) and len(initial) != N:
        violations.append(
            Violation("options.initial_state", f"expected {N} counts, got {len(initial)}")
        )
    slices = options.get("slices")
    if isinstance(slices, list):
        for i, spec in enumerate(slices):
            if not isinstance(spec, dict):
                continue
            axes = [spec.get("x", 1), spec.get("y", 2)]
            fixed = spec.get("fixed") or {}
            if isinstance(fixed, dict):
                axes.extend(fixed.keys())
            for axis in axes:
                try:
                    index = int(axis)
                except (TypeError, ValueError):
                    continue
                if not 1 <= index <= N:
                    violations.append(
                        Violation(f"options.slices.{i}", f"deadline index {index} outside 1..{N}")
                    )
            if spec.get("x", 1) == spec.get("y", 2):
                violations.append(Violation(f"options.slices.{i}", "x and y must differ"))
    return violations


def _pruning_violations(data: Dict[str, Any]) -> List[Violation]:
    """Slot-start pruning is uncharged, so it is only allowed for a single policy run."""
    options = data.get("options")
    if not isinstance(options, dict) or options.get("restrict_to_reduced") is not True:
        return []
    kind = data.get("kind")
    if kind == "sweep_threshold":
        runs = len(options.get("B_values") or [])
    elif kind == "simulate":
        policies = options.get("policies")
        runs = len(policies) if isinstance(policies, list) else len(PolicyKind)
        if isinstance(policies, list) and any(
            isinstance(p, dict) and p.get("name") == "threshold" and p.get("B") is None
            for p in policies
        ):
            runs = max(runs, len(options.get("threshold_range") or range(11)))
    else:
        return []
    if runs <= 1:
        return []
    return [
        Violation(
            "options.restrict_to_reduced",
            "pruned tasks are not charged; disable pruning when comparing policies",
        )
    ]


def validate_config(raw: str):
    """
    Parse and validate one experiment config.

    Args:
        raw: YAML text

    Returns:
        The validated experiment model

    Raises:
        ConfigError: listing every violation found
    """
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError([Violation("<document>", f"not valid YAML: {exc}")]) from exc
    if not isinstance(data, dict):
        raise ConfigError([Violation("<document>", "expected a mapping at the top level")])

    kind = data.get("kind")
    violations: List[Violation] = []
    config = None
    try:
        config = _ADAPTER.validate_python(data)
    except ValidationError as exc:
        violations.extend(_pydantic_violations(exc, kind if isinstance(kind, str) else None))
    violations.extend(_dimension_violations(data))
    violations.extend(_pruning_violations(data))
    if violations:
        raise ConfigError(violations)
    return config


def load_config(path: Union[str, Path]):
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([Violation("<file>", f"cannot read {path}: {exc}")]) from exc
    return validate_config(raw)


def canonical_form(config) -> str:
    """Sorted YAML of the validated model; identical configs give identical text."""
    data = config.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


def config_hash(config) -> str:
    return hashlib.sha256(canonical_form(config).encode("utf-8")).hexdigest()


def state_of(counts: Optional[List[int]], N: int) -> SystemState:
    return SystemState(tuple(counts)) if counts is not None else SystemState.empty(N)


# Parameter tables used by the bundled experiments.


def reference_params(T: int = 1000) -> ModelParams:
    return ModelParams.with_uniform_arrival(N=3, T=T, p_a=0.7, mu=0.7, p0=0.5, C_o=1.0, C_p=3.0)


def threshold_params(T: int = 1000) -> ModelParams:
    return ModelParams.with_uniform_arrival(
        N=5, T=T, p_a=0.8, mu=0.6, p0=1.0 / 6.0, C_o=1.0, C_p=3.0
    )


_CONVEXITY_VARIANTS = {
    "a": dict(p_a=0.5, C_p=3.0, mu=0.5, p0=0.5),
    "b": dict(p_a=0.4, C_p=4.0, mu=0.3, p0=0.3),
    "c": dict(p_a=0.7, C_p=2.0, mu=0.6, p0=0.6),
}


def convexity_params(variant: str = "a", T: int = 1000, N: int = 5) -> ModelParams:
    try:
        values = _CONVEXITY_VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of a, b, c") from None
    return ModelParams.with_uniform_arrival(N=N, T=T, C_o=1.0, **values)


def comparison_params(
    N: int = 5, mu: float = 0.5, T: int = 1000, p0: Optional[float] = None
) -> ModelParams:
    """Baseline-comparison setting; every arrival outcome equally likely unless p0 is given."""
    if p0 is None:
        p0 = 1.0 / (N + 1)
    return ModelParams.with_uniform_arrival(N=N, T=T, p_a=0.1, mu=mu, p0=p0, C_o=1.0, C_p=3.0)
