"""
Pydantic schemas for the spe2d simulator.
Defines the run configuration tree, the run manifest, and the report rows
written by probes, benches and diagnostics.
"""

from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Frozen(BaseModel):
    """Immutable, strict config record (unknown keys rejected)."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


# ---------------------------------------------------------------------------
# Configuration tree
# ---------------------------------------------------------------------------

class DomainSpec(_Frozen):
    """Rectangle (0, length) x (-depth, 0) sampled on an nx-by-nz node grid."""

    length: float = Field(1.0, gt=0, description="Horizontal extent L")
    depth: float = Field(1.0, gt=0, description="Depth h")
    nx: int = Field(
        32, ge=4, description="Resolution in x as a node count: both walls included, nx - 1 intervals"
    )
    nz: int = Field(
        32, ge=4, description="Resolution in z as a node count: bottom and surface included, nz - 1 intervals"
    )
    alpha_v: float = Field(1.0, ge=0, description="Surface Robin coefficient, velocity")
    alpha_t: float = Field(1.0, ge=0, description="Surface Robin coefficient, temperature")

    @property
    def hx(self) -> float:
        return self.length / (self.nx - 1)

    @property
    def hz(self) -> float:
        return self.depth / (self.nz - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nz)


class PhysicalParams(_Frozen):
    nu: float = Field(1e-2, gt=0, description="Viscosity")
    mu: float = Field(1e-2, gt=0, description="Heat diffusivity")
    f: float = Field(1.0, description="Coriolis parameter (constant)")
    beta_t: float = Field(2e-4, description="Thermal expansion coefficient")
    g: float = Field(9.81, description="Gravity")
    rho0: float = Field(1e3, gt=0, description="Reference density")
    t0: float = Field(0.0, description="Reference temperature")


NoiseKind = Literal["additive", "diagonal-multiplicative", "affine", "nonlinear"]


class NoiseSpec(_Frozen):
    """Truncated Wiener forcing: K modes with k^-gamma amplitude decay."""

    kind: NoiseKind = "additive"
    modes: int = Field(16, ge=0, description="Truncation K; 0 means deterministic")
    gamma: float = Field(2.0, gt=1, description="Decay exponent of the mode amplitudes")
    amplitude: float = Field(1e-2, ge=0, description="Scale of the additive fields a_k")
    gain: float = Field(1e-1, ge=0, description="Scale of the multiplicative gains b_k")
    gains: Optional[tuple[float, ...]] = Field(
        None, description="Explicit gains b_k, overriding gain * k^-gamma"
    )
    envelope: Literal["sin2", "uniform"] = "sin2"

    @model_validator(mode="after")
    def _check_gains(self):
        if self.gains is not None and len(self.gains) != self.modes:
            raise ValueError(f"gains has {len(self.gains)} entries, expected modes={self.modes}")
        return self


class ForcingSpec(_Frozen):
    """Deterministic forcing F: zero, a fixed smooth field, or a field times a table."""

    kind: Literal["zero", "fixed", "table"] = "zero"
    amplitude: float = 0.0
    component: Literal["u", "v", "temp"] = "v"
    wavenumbers: tuple[int, int] = Field((1, 1), description="(p, q) of the forcing profile")
    table: tuple[tuple[float, float], ...] = Field(
        (), description="(time, factor) pairs, linearly interpolated"
    )

    @field_validator("wavenumbers")
    @classmethod
    def _positive(cls, value):
        if min(value) < 1:
            raise ValueError("wavenumbers must be >= 1")
        return value

    @model_validator(mode="after")
    def _check_table(self):
        if self.kind == "table":
            if len(self.table) < 2:
                raise ValueError("table forcing needs at least two (time, factor) rows")
            times = [row[0] for row in self.table]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("table times must be strictly increasing")
        return self


class InitialSpec(_Frozen):
    """Initial state U0: zero, a random smooth field, or explicit mode coefficients."""

    kind: Literal["zero", "random", "modes"] = "random"
    amplitude: float = Field(0.1, ge=0)
    order: int = Field(3, ge=1, description="Trigonometric order of random fields")
    seed: Optional[int] = Field(None, ge=0, description="Defaults to numerics.seed")
    coefficients: tuple[float, ...] = ()


class NumericsSpec(_Frozen):
    n_galerkin: int = Field(48, ge=1)
    dt: float = Field(1e-3, gt=0)
    t_end: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    blowup_m: float = Field(1e6, gt=0, description="Threshold M of the sup+integral monitor")
    tau_n_budget: Optional[float] = Field(
        None, gt=0, description="Budget n of the integrated strong-norm monitor"
    )
    blowup_factor: float = Field(1e12, gt=1)
    stop_on_monitor: bool = True
    buoyancy: bool = True
    coriolis: bool = True
    advection: bool = True


class OutputSpec(_Frozen):
    cadence: int = Field(1, ge=1, description="Snapshot every cadence steps")
    snapshots: bool = True
    directory: str = "runs"


class SimConfig(_Frozen):
    """Full run configuration; mirrors the TOML sections one to one."""

    domain: DomainSpec = DomainSpec()
    physics: PhysicalParams = PhysicalParams()
    noise: NoiseSpec = NoiseSpec()
    forcing: ForcingSpec = ForcingSpec()
    initial: InitialSpec = InitialSpec()
    numerics: NumericsSpec = NumericsSpec()
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _check_horizon(self):
        if self.numerics.t_end < self.numerics.dt:
            raise ValueError("numerics.t_end must be >= numerics.dt")
        return self

    @property
    def n_steps(self) -> int:
        return max(1, int(math.floor(self.numerics.t_end / self.numerics.dt + 1e-9)))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

class TrajectoryStatusRow(BaseModel):
    trajectory: int
    status: str
    steps: int
    final_time: float
    tau_m_step: Optional[int] = None
    tau_n_step: Optional[int] = None


class RunManifest(BaseModel):
    """Provenance of one CLI workflow; wall-clock fields are the only nondeterministic bytes."""

    command: str
    config_hash: str
    code_version: str
    seed: int
    started_at: str = ""
    finished_at: str = ""
    trajectories: list[TrajectoryStatusRow] = Field(default_factory=list)
    files: list[str] = Field(default_factory=list)
    csv_schema_version: int = 1


# ---------------------------------------------------------------------------
# Report rows
# ---------------------------------------------------------------------------

class ProbeRow(BaseModel):
    estimate: str
    sample: int
    lhs: float
    rhs: float
    ratio: float


class ProbeReport(BaseModel):
    """Empirical LHS/RHS ratios of one inequality on one grid."""

    estimate: str
    nx: int
    nz: int
    rows: list[ProbeRow] = Field(default_factory=list)
    skipped: int = 0
    max_ratio: float = 0.0
    refined_max_ratio: Optional[float] = None
    passed: Optional[bool] = None

    @property
    def used(self) -> int:
        return len(self.rows)


class PoincareReport(BaseModel):
    n: int
    lambda_next: float
    samples: int
    violations: int
    max_ratio: float = Field(description="max of LHS / RHS over the samples")


class LipschitzReport(BaseModel):
    kind: str
    space: Literal["H", "V"]
    samples: int
    skipped: int
    max_ratio: float
    bound: Optional[float] = Field(None, description="Closed-form constant when known")
    passed: bool


class CauchyRow(BaseModel):
    n: int
    m: int
    window_steps: int
    sup_v_norm2: float
    int_a_norm2: float


class CauchyReport(BaseModel):
    orders: list[int]
    seed: int
    window_steps: int
    rows: list[CauchyRow] = Field(default_factory=list)


class StoptimeRow(BaseModel):
    threshold: float
    p_hat: float
    stderr: float
    oracle: Optional[float] = None


class ChainRow(BaseModel):
    threshold: float
    budget: float
    p_hat: float
    kappa_hat: float
    p_tau: float
    bound: float
    holds: bool


class StoptimeReport(BaseModel):
    generator: str
    horizon: float
    trials: int
    rows: list[StoptimeRow] = Field(default_factory=list)
    chain: list[ChainRow] = Field(default_factory=list)
    monotone: bool = True


class GronwallTrialRow(BaseModel):
    trial: int
    hypothesis_ok: bool
    lhs: float
    rhs: float
    ratio: float


class GronwallReport(BaseModel):
    generator: str
    trials: int
    flagged: int
    c_fitted: float
    k_bound: float
    rows: list[GronwallTrialRow] = Field(default_factory=list)
