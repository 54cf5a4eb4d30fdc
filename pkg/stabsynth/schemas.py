"""Validated run configuration and algorithm settings."""

import json
import math
from pathlib import Path
from typing import Any, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from stabsynth import matops
from stabsynth.exceptions import ConfigError
from stabsynth.sysmodel import CostSpec, StochasticLinearSystem

FORMAT_VERSION = 1

Matrix = List[List[float]]


def _as_rows(value: Any) -> Any:
    """Accept a scalar or a flat list (column vector) where a matrix is expected."""
    if isinstance(value, (int, float)):
        return [[value]]
    if isinstance(value, list) and value and all(isinstance(v, (int, float)) for v in value):
        return [[v] for v in value]
    return value


def _check_rectangular(value: Matrix) -> Matrix:
    if not value or not value[0]:
        raise ValueError("matrix must be non-empty")
    width = len(value[0])
    if any(len(row) != width for row in value):
        raise ValueError("matrix rows must have equal length")
    if not all(math.isfinite(x) for row in value for x in row):
        raise ValueError("matrix entries must be finite")
    return value


def _check_pd(value: Matrix, name: str) -> Matrix:
    arr = np.array(value, dtype=float)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square")
    if not matops.is_positive_definite(arr):
        raise ValueError(f"{name} must be symmetric positive definite")
    return value


class SystemConfig(BaseModel):
    """System matrices of dX = (AX + Bu)dt + (CX + Du)dW."""

    model_config = ConfigDict(extra="forbid")

    a: Matrix = Field(..., description="Drift state matrix A (n x n)")
    b: Matrix = Field(..., description="Drift control matrix B (n x m)")
    c: Matrix = Field(..., description="Diffusion state matrix C (n x n)")
    d: Matrix = Field(..., description="Diffusion control matrix D (n x m)")

    @field_validator("a", "b", "c", "d", mode="before")
    @classmethod
    def coerce_rows(cls, v: Any) -> Any:
        return _as_rows(v)

    @field_validator("a", "b", "c", "d")
    @classmethod
    def check_shape(cls, v: Matrix) -> Matrix:
        return _check_rectangular(v)

    @model_validator(mode="after")
    def check_dimensions(self) -> "SystemConfig":
        self.to_system()
        return self

    def to_system(self) -> StochasticLinearSystem:
        return StochasticLinearSystem(
            a=np.array(self.a), b=np.array(self.b), c=np.array(self.c), d=np.array(self.d)
        )


class CostConfig(BaseModel):
    """Cost weights and the cost-inflation factor."""

    model_config = ConfigDict(extra="forbid")

    q: Matrix = Field(..., description="State weight Q (symmetric positive definite)")
    r: Matrix = Field(..., description="Control weight R (symmetric positive definite)")
    zeta: float = Field(..., gt=1.0, description="Cost-inflation factor, > 1")

    @field_validator("q", "r", mode="before")
    @classmethod
    def coerce_rows(cls, v: Any) -> Any:
        return _as_rows(v)

    @field_validator("q")
    @classmethod
    def check_q(cls, v: Matrix) -> Matrix:
        return _check_pd(_check_rectangular(v), "Q")

    @field_validator("r")
    @classmethod
    def check_r(cls, v: Matrix) -> Matrix:
        return _check_pd(_check_rectangular(v), "R")


class InitialStateConfig(BaseModel):
    """Distribution of the initial state."""

    model_config = ConfigDict(extra="forbid")

    distribution: Literal["standard_normal", "fixed", "gaussian"] = "standard_normal"
    vectors: Optional[Matrix] = Field(
        None, description="Fixed initial states, one per sub-batch (distribution=fixed)"
    )
    sigma0: Optional[Matrix] = Field(
        None, description="Second moment of a zero-mean Gaussian initial state"
    )

    @model_validator(mode="after")
    def check_distribution(self) -> "InitialStateConfig":
        if self.distribution == "fixed":
            if not self.vectors:
                raise ValueError("distribution 'fixed' requires vectors")
            _check_rectangular(self.vectors)
        if self.distribution == "gaussian":
            if self.sigma0 is None:
                raise ValueError("distribution 'gaussian' requires sigma0")
            _check_pd(_check_rectangular(self.sigma0), "sigma0")
        return self

    @property
    def fixed_count(self) -> int:
        return len(self.vectors or []) if self.distribution == "fixed" else 0

    def sigma0_matrix(self, n: int) -> np.ndarray:
        """Second moment used by the decrement rule; identity unless Gaussian."""
        if self.distribution == "gaussian" and self.sigma0 is not None:
            return np.array(self.sigma0, dtype=float)
        return np.eye(n)


class PiSettings(BaseModel):
    """Policy-iteration and discount-schedule settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eps: float = Field(1e-8, gt=0, description="Stop when ||P_next - P||_F < eps")
    max_inner_iters: int = Field(
        200, ge=2, description="Convergence is judged on successive value matrices, so at least two"
    )
    max_outer_iters: int = Field(10000, ge=1)
    riccati_rtol: float = Field(1e-7, gt=0, description="Relative Riccati residual tolerance")
    eps_model_free: float = Field(1e-6, gt=0, description="Floor of the model-free stopping tolerance")
    stagnation_window: int = Field(5, ge=2)
    adaptive_eps: bool = Field(True, description="Raise the model-free tolerance to 3x the noise floor")
    rank_tol: float = Field(1e-8, gt=0, description="Relative singular-value threshold for Phi")
    polish: bool = Field(False, description="Return the undiscounted optimal gain")
    cost_estimator: Literal["adp", "rollout", "on_policy"] = Field(
        "adp",
        description="How the cost at each discount is evaluated",
    )


class SimConfig(BaseModel):
    """Euler-Maruyama and Monte Carlo settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    t0: float = Field(1.0, gt=0, description="Length of each data window")
    n_traj: int = Field(10000, ge=1, description="Sample paths per sub-batch")
    n_grid: int = Field(100, ge=1, description="Quadrature intervals on [0, t0]")
    dt: Optional[float] = Field(None, gt=0, description="Step size; defaults to t0 / (100 n_grid)")
    l: Optional[int] = Field(None, ge=1, description="Sub-batches (rows of the data matrices)")
    master_seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1, description="Threads used for sub-batches")
    overflow_guard: float = Field(1e8, gt=0)
    oracle_substeps: int = Field(40, ge=1, description="RK4 steps per grid interval in the moment oracle")
    rollout_horizon: float = Field(10.0, gt=0)
    rollout_n_traj: int = Field(2000, ge=1)
    quadrature: Literal["left", "trapezoid"] = Field(
        "left", description="Time-integral rule for the data matrices on the grid"
    )
    sigma0_samples: Optional[int] = Field(
        1_000_000,
        ge=2,
        description="Initial states drawn to estimate Sigma0; null uses the batch's own initial states",
    )

    @model_validator(mode="after")
    def check_step(self) -> "SimConfig":
        self.substeps()
        return self

    @property
    def grid_step(self) -> float:
        return self.t0 / self.n_grid

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else self.grid_step / 100

    def substeps(self) -> int:
        """Euler-Maruyama steps per grid interval."""
        ratio = self.grid_step / self.resolved_dt()
        steps = int(round(ratio))
        if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"dt must divide t0/n_grid = {self.grid_step}")
        return steps

    def resolve_l(self, n: int, m: int, fixed_vectors: int = 0) -> int:
        """Sub-batch count; an unset ``l`` covers every fixed initial vector."""
        cols = matops.vech_size(n) + n * m + matops.vech_size(m)
        if self.l is not None:
            if self.l < cols:
                raise ValueError(f"l = {self.l} is below the {cols} columns of Phi")
            return self.l
        return max(math.ceil(1.2 * cols), fixed_vectors)


class NoiseConfig(BaseModel):
    """Exploration noise: sums of sinusoids, drawn per sub-batch unless explicit."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    terms: int = Field(10, ge=1)
    freq_low: float = Field(0.5, gt=0)
    freq_high: float = Field(50.0, gt=0)
    amplitude: float = Field(0.1, ge=0)
    seed: int = Field(0, ge=0)
    amplitudes: Optional[List[float]] = None
    frequencies: Optional[List[float]] = None
    phases: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_components(self) -> "NoiseConfig":
        if self.freq_high < self.freq_low:
            raise ValueError("freq_high must not be below freq_low")
        explicit = [self.amplitudes, self.frequencies, self.phases]
        given = [x is not None for x in explicit]
        if any(given) and not all(given):
            raise ValueError("amplitudes, frequencies and phases must be given together")
        if all(given):
            lengths = {len(x) for x in explicit if x is not None}
            if len(lengths) != 1 or 0 in lengths:
                raise ValueError("amplitudes, frequencies and phases need equal non-zero length")
        return self

    @property
    def explicit(self) -> bool:
        return self.amplitudes is not None


class RunConfig(BaseModel):
    """Complete description of one stabilization run."""

    model_config = ConfigDict(extra="forbid")

    format_version: Literal[1] = FORMAT_VERSION
    name: str = Field("run", min_length=1)
    system: SystemConfig
    cost: CostConfig
    initial_state: InitialStateConfig = Field(default_factory=InitialStateConfig)
    mode: Literal["model_based", "model_free", "model_free_oracle"] = "model_based"
    alpha0: Union[float, Literal["auto"]] = "auto"
    alpha_margin: float = Field(1.0, gt=0, description="Margin over the initial-discount bound")
    pi: PiSettings = Field(default_factory=PiSettings)
    sim: SimConfig = Field(default_factory=SimConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        sys = self.system.to_system()
        if np.array(self.cost.q).shape != (sys.n, sys.n):
            raise ValueError(f"cost.q must be {sys.n}x{sys.n}")
        if np.array(self.cost.r).shape != (sys.m, sys.m):
            raise ValueError(f"cost.r must be {sys.m}x{sys.m}")
        init = self.initial_state
        if init.vectors is not None and any(len(v) != sys.n for v in init.vectors):
            raise ValueError(f"initial_state.vectors must have length {sys.n}")
        if init.sigma0 is not None and np.array(init.sigma0).shape != (sys.n, sys.n):
            raise ValueError(f"initial_state.sigma0 must be {sys.n}x{sys.n}")
        if self.mode != "model_based":
            l = self.sub_batches()
            if init.distribution == "fixed" and len(init.vectors or []) < l:
                raise ValueError(f"initial_state.vectors needs at least {l} entries")
        return self

    def to_system(self) -> StochasticLinearSystem:
        return self.system.to_system()

    def to_cost_spec(self) -> CostSpec:
        sys = self.to_system()
        return CostSpec(
            q=np.array(self.cost.q, dtype=float),
            r=np.array(self.cost.r, dtype=float),
            sigma0=self.initial_state.sigma0_matrix(sys.n),
            zeta=self.cost.zeta,
        )

    def sub_batches(self) -> int:
        """Rows of the data matrices; all fixed initial vectors are used when l is unset."""
        sys = self.to_system()
        return self.sim.resolve_l(sys.n, sys.m, self.initial_state.fixed_count)


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "; ".join(lines)


def validate_config(data: Any) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate JSON run configuration text."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return validate_config(data)


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def config_schema() -> str:
    return json.dumps(RunConfig.model_json_schema(), indent=2)
