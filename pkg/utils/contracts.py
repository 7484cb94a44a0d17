"""
Contract schemas for the superprocess lab.

This module defines the Pydantic models used for:
1. Results of the analytic engines (moments, limit variances, bound checks)
2. The experiment configuration every suite consumes
3. The experiment report (rows, summary, verdicts, manifest) every suite produces
"""

import hashlib
import json
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lab.tools.model_core import DEFAULT_DEGREE_CAP, AtomicMeasure, ModelParams, Polynomial, Regime


class MomentKind(str, Enum):
    U_SUPER = "u_super"
    U_SUB = "u_sub"
    V_BACKBONE = "v_backbone"


class MomentResult(BaseModel):
    """Value of u_f^k, u*_f^k or V_f^k at (x, t) with its quadrature error estimate.

    For k = 1 the value is closed form and abs_error_estimate is exactly 0.
    """
    value: float
    abs_error_estimate: float = Field(ge=0.0, allow_inf_nan=False)
    k: int = Field(ge=1, le=4)
    kind: MomentKind
    x: List[float] = Field(default_factory=list)
    t: float = 0.0

    def record(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "k": self.k,
            "x": self.x,
            "t": self.t,
            "value": self.value,
            "abs_error_estimate": self.abs_error_estimate,
        }


class VarianceMethod(str, Enum):
    QUADRATURE = "quadrature"
    CLOSED_FORM = "closed_form"


class VarianceResult(BaseModel):
    sigma_sq: float = Field(ge=0.0)
    regime: Regime
    tail_bound: float = 0.0
    method: VarianceMethod
    horizon: Optional[float] = None


class FastBoundReport(BaseModel):
    """Normalized second moments e^{-2(alpha-mu)t}|V_f~^2(x,t)| over an (x, t) grid."""
    x_grid: List[List[float]]
    t_grid: List[float]
    values: List[List[float]]              # values[i][j] at x_grid[i], t_grid[j]
    max_value: float
    burn_in: float
    nonincreasing: bool
    stabilizing: bool
    finite: bool


class SurvivalProxy(str, Enum):
    ALIVE = "alive"
    HALF_MEDIAN = "half_median"


class ExperimentConfig(BaseModel):
    """Everything a suite needs to run, validated once at load time."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    f: Polynomial
    nu: AtomicMeasure
    horizon: float = Field(gt=0.0)
    laplace_time: float = Field(default=1.0, gt=0.0)
    thetas: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    resolution: int = Field(default=200, ge=1)
    replicas: int = Field(default=5000, ge=100)
    seed: int = Field(default=20240601, ge=0)
    workers: int = Field(default=1, ge=1)
    regime: Optional[Regime] = None
    survival_proxy: SurvivalProxy = SurvivalProxy.ALIVE
    mechanism: str = Field(default="super", pattern="^(super|sub)$")
    v_draws: int = Field(default=10_000, ge=100)
    population_cap: int = Field(default=2_000_000, ge=1)
    output_dir: str = "data/runs"
    quick: bool = False

    @field_validator("f")
    @classmethod
    def _degree_capped(cls, f: Polynomial) -> Polynomial:
        return f.check_degree(DEFAULT_DEGREE_CAP)

    @model_validator(mode="after")
    def _consistent(self):
        if self.f.dim != self.params.dim:
            raise ValueError(f"test function has dim={self.f.dim}, parameters have dim={self.params.dim}")
        if not self.nu.is_empty() and self.nu.dim != self.params.dim:
            raise ValueError(f"initial measure has dim={self.nu.dim}, parameters have dim={self.params.dim}")
        if any(theta < 0 for theta in self.thetas):
            raise ValueError("Laplace thetas must be non-negative")
        if self.regime is None:
            self.regime = self.params.regime()
        elif self.regime != self.params.regime():
            raise ValueError(
                f"regime '{self.regime.value}' requested but parameters are "
                f"'{self.params.regime().value}' (alpha={self.params.alpha}, mu={self.params.mu})"
            )
        return self

    def describe(self) -> Dict[str, Any]:
        """Plain JSON-able view (used for hashing and manifests)."""
        return {
            "params": self.params.model_dump(),
            "f": self.f.format(),
            "nu": self.nu.format(),
            "horizon": self.horizon,
            "laplace_time": self.laplace_time,
            "thetas": list(self.thetas),
            "resolution": self.resolution,
            "replicas": self.replicas,
            "seed": self.seed,
            "regime": self.regime.value if self.regime else None,
            "survival_proxy": self.survival_proxy.value,
            "mechanism": self.mechanism,
            "v_draws": self.v_draws,
            "population_cap": self.population_cap,
            "quick": self.quick,
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


class ReplicaRow(BaseModel):
    """One replica's observables; ``values`` holds the suite-specific columns."""
    replica_id: int
    survived: bool
    mass: float
    v_t: float
    values: Dict[str, float] = Field(default_factory=dict)


class RunManifest(BaseModel):
    seed: int
    config_hash: str
    runtime_s: float
    workers: int
    started_at: str
    config: Dict[str, Any] = Field(default_factory=dict)


class ExperimentReport(BaseModel):
    """
    Output contract of every suite.
    Includes:
    - rows: per-replica observables, sorted by replica_id
    - summary: statistics recomputable from rows
    - verdicts: name -> {passed, detail...}
    - manifest: seed, config hash, runtime
    - errors: messages from non-fatal problems
    """
    suite: str
    rows: List[ReplicaRow] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    verdicts: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    manifest: Optional[RunManifest] = None
    errors: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(bool(v.get("passed")) for v in self.verdicts.values())


class SuiteOut(BaseModel):
    """
    Output contract for all suites (the patch merged into the report).
    - status: ok, error
    - summary / verdicts: merged into the ExperimentReport with deepMerge
    - errors: any error messages to log
    """
    status: str
    summary: Dict[str, Any] = Field(default_factory=dict)
    verdicts: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    errors: List[str] = Field(default_factory=list)
