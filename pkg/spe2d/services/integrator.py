"""
Galerkin time stepping of the stochastic system.

Per step and mode k the semi-implicit Euler–Maruyama update is

    c_k ← (c_k + dt ⟨F - N(U), Φ_k⟩ + Σ_j ⟨σ_j(U), Φ_k⟩ ΔW^j) / (1 + dt λ_k)

with N and σ evaluated on the grid at the current state. A trajectory runs
until the horizon, a stopping-time monitor, or a numerical blowup.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

from spe2d.errors import ConfigError, ContractViolation, NumericalBlowup, SnapshotError
from spe2d.schemas.schemas import CauchyReport, CauchyRow, ForcingSpec, SimConfig
from spe2d.services.domain_fields import (
    StateField,
    get_grid,
    h2_norm,
    norm_h,
    project_h,
    random_smooth_state,
)
from spe2d.services.noise import (
    INITIAL_LANE,
    NoiseModel,
    RngStream,
    build_noise_model,
    sample_increment_block,
    sigma_stack,
)
from spe2d.services.operators import OperatorBench, apply_a, apply_n, get_bench
from spe2d.services.settings import override_config
from spe2d.services.spectral import (
    EigenBasis,
    SpectralCoeffs,
    coefficient_norms,
    get_basis,
    project_pn,
    project_stack,
    synthesize,
)
from spe2d.utils.logging import log_blowup, log_monitor_hit, log_progress

logger = logging.getLogger("spe2d")


class RunStatus(str, Enum):
    COMPLETED = "completed"
    STOPPED = "stopped-at-tau"
    BLOWUP = "numerical-blowup"


# ---------------------------------------------------------------------------
# Forcing
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Forcing:
    """F(t) = factor(t) · profile, or an arbitrary field function."""

    profile: Optional[StateField] = None
    times: tuple[float, ...] = ()
    factors: tuple[float, ...] = ()
    field_fn: Optional[Callable[[float], StateField]] = None

    @property
    def is_zero(self) -> bool:
        return self.profile is None and self.field_fn is None

    def factor(self, t: float) -> float:
        if not self.times:
            return 1.0
        return float(np.interp(t, self.times, self.factors))

    def field(self, t: float) -> Optional[StateField]:
        if self.field_fn is not None:
            return self.field_fn(t)
        if self.profile is None:
            return None
        return self.profile * self.factor(t)


def forcing_profile(spec: ForcingSpec, domain) -> StateField:
    """Smooth single-component profile with wavenumbers (p, q)."""
    p, q = spec.wavenumbers
    x, z = get_grid(domain).meshgrid()
    zeta = (z + domain.depth) / domain.depth
    stack = np.zeros((3,) + domain.shape)
    if spec.component == "u":
        stack[0] = np.sin(p * np.pi * x / domain.length) * np.cos(q * np.pi * zeta)
    elif spec.component == "v":
        stack[1] = np.sin(p * np.pi * x / domain.length) * np.sin((2 * q - 1) * np.pi * zeta / 2)
    else:
        stack[2] = np.cos(p * np.pi * x / domain.length) * np.cos(q * np.pi * zeta)
    raw = StateField.from_stack(domain, spec.amplitude * stack)
    return project_h(raw.u, raw.v, raw.temp)


def build_forcing(spec: ForcingSpec, domain) -> Forcing:
    if spec.kind == "zero" or spec.amplitude == 0.0:
        return Forcing()
    profile = forcing_profile(spec, domain)
    if spec.kind == "fixed":
        return Forcing(profile=profile)
    times, factors = zip(*spec.table)
    return Forcing(profile=profile, times=tuple(times), factors=tuple(factors))


def forcing_norm2(ctx: RunContext, times: np.ndarray) -> np.ndarray:
    """|F(t)|²_H at each time."""
    out = np.zeros(len(times))
    for i, t in enumerate(times):
        forced = ctx.forcing.field(float(t))
        if forced is not None:
            out[i] = norm_h(forced) ** 2
    return out


# ---------------------------------------------------------------------------
# Run context
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunContext:
    config: SimConfig
    bench: OperatorBench
    basis: EigenBasis
    noise: NoiseModel
    forcing: Forcing
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.basis.size

    @property
    def dt(self) -> float:
        return self.config.numerics.dt

    @property
    def n_steps(self) -> int:
        return self.config.n_steps

    @property
    def seed(self) -> int:
        return self.config.numerics.seed

    def additive_projection(self) -> np.ndarray:
        """(K, n) matrix ⟨σ_k, Φ_j⟩ for state-independent noise."""
        if "sigma" not in self._cache:
            zero = StateField.zeros(self.basis.domain)
            self._cache["sigma"] = project_stack(self.basis, self.n, sigma_stack(self.noise, zero))
        return self._cache["sigma"]


def prepare_run(
    cfg: SimConfig,
    basis: EigenBasis | None = None,
    noise: NoiseModel | None = None,
    forcing: Forcing | None = None,
) -> RunContext:
    """Resolve bench, basis (truncated to n_galerkin), noise and forcing for a config."""
    n = cfg.numerics.n_galerkin
    bench = get_bench(cfg.domain, cfg.physics)
    if basis is None:
        try:
            basis = get_basis(cfg.domain, cfg.physics, n)
        except ContractViolation as exc:
            raise ConfigError("numerics.n_galerkin", str(exc)) from exc
    elif basis.size < n:
        raise ConfigError("numerics.n_galerkin", f"{n} exceeds the supplied basis size {basis.size}")
    elif basis.size > n:
        basis = basis.truncate(n)
    if basis.domain != cfg.domain:
        raise ContractViolation("basis domain does not match the config")
    noise = build_noise_model(cfg.noise, cfg.domain) if noise is None else noise
    forcing = build_forcing(cfg.forcing, cfg.domain) if forcing is None else forcing
    return RunContext(cfg, bench, basis, noise, forcing)


def initial_coefficients(ctx: RunContext) -> SpectralCoeffs:
    spec = ctx.config.initial
    n = ctx.n
    if spec.kind == "zero":
        return np.zeros(n)
    if spec.kind == "modes":
        out = np.zeros(n)
        given = np.asarray(spec.coefficients, dtype=float)[:n]
        out[: given.size] = given
        return out
    seed = ctx.seed if spec.seed is None else spec.seed
    rng = np.random.default_rng([seed, INITIAL_LANE])
    state = random_smooth_state(ctx.basis.domain, rng, order=spec.order, amplitude=spec.amplitude)
    return project_pn(ctx.basis, n, state)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def drift_coefficients(ctx: RunContext, state: StateField, t: float) -> SpectralCoeffs:
    """⟨F(t) - N(U), Φ_k⟩ for k < n."""
    num = ctx.config.numerics
    drift = -apply_n(
        ctx.bench, state, buoyancy=num.buoyancy, advection=num.advection, coriolis=num.coriolis
    ).stack()
    forced = ctx.forcing.field(t)
    if forced is not None:
        drift = drift + forced.stack()
    return project_stack(ctx.basis, ctx.n, drift[None])[0]


def sigma_projection(ctx: RunContext, state: StateField) -> np.ndarray:
    """(K, n) matrix ⟨σ_k(U), Φ_j⟩."""
    if ctx.noise.modes == 0:
        return np.zeros((0, ctx.n))
    if ctx.noise.is_additive:
        return ctx.additive_projection()
    return project_stack(ctx.basis, ctx.n, sigma_stack(ctx.noise, state))


@dataclass(frozen=True)
class StepResult:
    coeffs: SpectralCoeffs
    drift: SpectralCoeffs
    sigma: np.ndarray


def step_galerkin(
    ctx: RunContext,
    coeffs: SpectralCoeffs,
    t: float,
    increments: np.ndarray,
    state: StateField | None = None,
) -> StepResult:
    """One semi-implicit Euler–Maruyama step; ``increments`` holds ΔW^1..ΔW^K."""
    if coeffs.size != ctx.n:
        raise ContractViolation(f"expected {ctx.n} coefficients, got {coeffs.size}")
    if t + ctx.dt > ctx.config.numerics.t_end * (1.0 + 1e-12) + 1e-12:
        raise ContractViolation(f"step from t={t} passes t_end={ctx.config.numerics.t_end}")
    state = synthesize(ctx.basis, coeffs) if state is None else state
    drift = drift_coefficients(ctx, state, t)
    sigma = sigma_projection(ctx, state)
    noise = sigma.T @ increments if sigma.size else 0.0
    new = (coeffs + ctx.dt * drift + noise) / (1.0 + ctx.dt * ctx.basis.lambdas)
    return StepResult(new, drift, sigma)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to resume a trajectory bit-exactly (the step index is
    the RNG cursor)."""

    step: int
    coeffs: np.ndarray
    seed: int
    trajectory: int
    sup_v: float
    int_a: float
    int_u: float


@dataclass(eq=False)
class TrajectoryRecord:
    trajectory: int
    seed: int
    n: int
    dt: float
    start_step: int
    times: np.ndarray
    h_norm2: np.ndarray
    v_norm2: np.ndarray
    a_norm2: np.ndarray
    u_h2_norm2: np.ndarray
    sup_v: np.ndarray
    int_a: np.ndarray
    int_u: np.ndarray
    snapshot_steps: np.ndarray
    snapshots: np.ndarray
    increments: np.ndarray
    status: RunStatus = RunStatus.COMPLETED
    tau_m_step: Optional[int] = None
    tau_n_step: Optional[int] = None
    blowup_step: Optional[int] = None

    @property
    def steps(self) -> np.ndarray:
        return self.start_step + np.arange(self.times.size)

    @property
    def final_step(self) -> int:
        return self.start_step + self.times.size - 1

    @property
    def final_coeffs(self) -> np.ndarray:
        return self.snapshots[-1]

    def snapshot(self, step: int) -> np.ndarray:
        hits = np.flatnonzero(self.snapshot_steps == step)
        if not hits.size:
            raise SnapshotError(f"no snapshot at step {step} (cadence too coarse?)")
        return self.snapshots[hits[0]]

    def has_every_step(self) -> bool:
        return self.snapshot_steps.size == self.times.size and bool(
            np.all(self.snapshot_steps == self.steps)
        )

    def checkpoint(self, step: int | None = None) -> Checkpoint:
        step = self.final_step if step is None else step
        i = step - self.start_step
        if not 0 <= i < self.times.size:
            raise SnapshotError(f"step {step} is outside the record")
        return Checkpoint(
            step=step,
            coeffs=self.snapshot(step).copy(),
            seed=self.seed,
            trajectory=self.trajectory,
            sup_v=float(self.sup_v[i]),
            int_a=float(self.int_a[i]),
            int_u=float(self.int_u[i]),
        )


class _Monitor:
    """Running sup ‖U‖² + trapezoid ∫|AU|² and ∫|u|₍₂₎²."""

    def __init__(self, dt: float, threshold: float, budget: float | None, start: Checkpoint | None):
        self.dt = dt
        self.threshold = threshold
        self.budget = budget
        self.sup_v = start.sup_v if start else -math.inf
        self.int_a = start.int_a if start else 0.0
        self.int_u = start.int_u if start else 0.0
        self._last: tuple[float, float] | None = None
        self._resumed = start is not None

    def update(self, v2: float, a2: float, u2: float) -> tuple[bool, bool]:
        if self._last is not None:
            self.int_a += 0.5 * self.dt * (self._last[0] + a2)
            self.int_u += 0.5 * self.dt * (self._last[1] + u2)
        self.sup_v = max(self.sup_v, v2)
        self._last = (a2, u2)
        hit_m = self.sup_v + self.int_a > 4.0 * self.threshold
        hit_n = self.budget is not None and self.int_u > self.budget
        return hit_m, hit_n


def run_trajectory(
    ctx: RunContext,
    trajectory: int = 0,
    checkpoint: Checkpoint | None = None,
    initial: SpectralCoeffs | None = None,
    strict: bool = False,
) -> TrajectoryRecord:
    """Advance one path from U₀ (or a checkpoint) and record its diagnostics."""
    num = ctx.config.numerics
    cadence = ctx.config.output.cadence
    dt = ctx.dt
    n_steps = ctx.n_steps
    start = 0
    if checkpoint is not None:
        if checkpoint.seed != num.seed or checkpoint.trajectory != trajectory:
            raise ContractViolation("checkpoint belongs to a different seed or trajectory")
        if checkpoint.coeffs.size != ctx.n:
            raise ContractViolation("checkpoint order does not match the context")
        start = checkpoint.step
        coeffs = checkpoint.coeffs.copy()
    else:
        coeffs = initial_coefficients(ctx) if initial is None else np.asarray(initial, dtype=float)

    K = ctx.noise.modes
    stream = RngStream(num.seed, trajectory)
    increments = (
        sample_increment_block(stream, K, dt, start, n_steps) if K else np.zeros((n_steps - start, 0))
    )
    monitor = _Monitor(dt, num.blowup_m, num.tau_n_budget, checkpoint)
    h0, _, _ = coefficient_norms(ctx.basis, coeffs)
    scale = max(math.sqrt(h0), 1.0)

    series = {k: [] for k in ("t", "h", "v", "a", "u", "sup", "inta", "intu")}
    snap_steps: list[int] = []
    snaps: list[np.ndarray] = []
    status = RunStatus.COMPLETED
    tau_m = tau_n = blowup = None

    step = start
    state = synthesize(ctx.basis, coeffs)
    while True:
        h2, v2, a2 = coefficient_norms(ctx.basis, coeffs)
        u2 = h2_norm(state.u) ** 2
        hit_m, hit_n = monitor.update(v2, a2, u2)
        for key, value in zip(
            series, (step * dt, h2, v2, a2, u2, monitor.sup_v, monitor.int_a, monitor.int_u)
        ):
            series[key].append(value)
        if (step - start) % cadence == 0 or step == n_steps:
            snap_steps.append(step)
            snaps.append(coeffs.copy())
            log_progress(trajectory, step, step * dt, h2, v2)
        if hit_m and tau_m is None:
            tau_m = step
            log_monitor_hit(trajectory, "tau_M", step, step * dt)
        if hit_n and tau_n is None:
            tau_n = step
            log_monitor_hit(trajectory, "tau_n", step, step * dt)
        if num.stop_on_monitor and (tau_m is not None or tau_n is not None):
            status = RunStatus.STOPPED
            break
        if step >= n_steps:
            break

        result = step_galerkin(ctx, coeffs, step * dt, increments[step - start], state)
        new = result.coeffs
        if not np.all(np.isfinite(new)) or math.sqrt(float(new @ new)) > num.blowup_factor * scale:
            status = RunStatus.BLOWUP
            blowup = step + 1
            log_blowup(trajectory, blowup, blowup * dt)
            if strict:
                raise NumericalBlowup("trajectory left the finite range", blowup, blowup * dt)
            break
        coeffs = new
        step += 1
        state = synthesize(ctx.basis, coeffs)

    if snap_steps[-1] != step:
        snap_steps.append(step)
        snaps.append(coeffs.copy())
    done = step - start
    return TrajectoryRecord(
        trajectory=trajectory,
        seed=num.seed,
        n=ctx.n,
        dt=dt,
        start_step=start,
        times=np.array(series["t"]),
        h_norm2=np.array(series["h"]),
        v_norm2=np.array(series["v"]),
        a_norm2=np.array(series["a"]),
        u_h2_norm2=np.array(series["u"]),
        sup_v=np.array(series["sup"]),
        int_a=np.array(series["inta"]),
        int_u=np.array(series["intu"]),
        snapshot_steps=np.array(snap_steps, dtype=np.int64),
        snapshots=np.array(snaps),
        increments=increments[:done].copy(),
        status=status,
        tau_m_step=tau_m,
        tau_n_step=tau_n,
        blowup_step=blowup,
    )


def concatenate_records(first: TrajectoryRecord, second: TrajectoryRecord) -> TrajectoryRecord:
    """Join a record with its continuation from ``first``'s final checkpoint."""
    if second.start_step != first.final_step:
        raise ContractViolation("second record does not continue the first")

    def join(a, b):
        return np.concatenate([a, b[1:]])

    steps = np.concatenate([first.snapshot_steps, second.snapshot_steps[1:]])
    snaps = np.concatenate([first.snapshots, second.snapshots[1:]])
    return TrajectoryRecord(
        trajectory=first.trajectory,
        seed=first.seed,
        n=first.n,
        dt=first.dt,
        start_step=first.start_step,
        times=join(first.times, second.times),
        h_norm2=join(first.h_norm2, second.h_norm2),
        v_norm2=join(first.v_norm2, second.v_norm2),
        a_norm2=join(first.a_norm2, second.a_norm2),
        u_h2_norm2=join(first.u_h2_norm2, second.u_h2_norm2),
        sup_v=join(first.sup_v, second.sup_v),
        int_a=join(first.int_a, second.int_a),
        int_u=join(first.int_u, second.int_u),
        snapshot_steps=steps,
        snapshots=snaps,
        increments=np.concatenate([first.increments, second.increments]),
        status=second.status,
        tau_m_step=first.tau_m_step if first.tau_m_step is not None else second.tau_m_step,
        tau_n_step=first.tau_n_step if first.tau_n_step is not None else second.tau_n_step,
        blowup_step=second.blowup_step,
    )


# ---------------------------------------------------------------------------
# Stopping-time monitors (post hoc)
# ---------------------------------------------------------------------------

def stopping_step(record: TrajectoryRecord, threshold: float) -> Optional[int]:
    """First step with sup‖U‖² + ∫|AU|² > 4M, else None."""
    hits = np.flatnonzero(record.sup_v + record.int_a > 4.0 * threshold)
    return int(record.start_step + hits[0]) if hits.size else None


def strong_budget_step(record: TrajectoryRecord, budget: float) -> Optional[int]:
    """First step with ∫|u|₍₂₎² > budget, else None."""
    hits = np.flatnonzero(record.int_u > budget)
    return int(record.start_step + hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# Galerkin Cauchy diagnostic
# ---------------------------------------------------------------------------

def order_difference(
    basis: EigenBasis, high: TrajectoryRecord, low: TrajectoryRecord, window: int
) -> tuple[float, float]:
    """sup_{j≤window} ‖R_j‖² and trapezoid ∫|AR|² for R = U^(m) - U^(n)."""
    m = high.n
    lam = basis.lambdas[:m]
    sup_v = 0.0
    integral = 0.0
    previous = None
    for step in range(window + 1):
        diff = high.snapshot(step).copy()
        diff[: low.n] -= low.snapshot(step)
        v2 = float(np.sum(lam * diff**2))
        a2 = float(np.sum(lam**2 * diff**2))
        sup_v = max(sup_v, v2)
        if previous is not None:
            integral += 0.5 * high.dt * (previous + a2)
        previous = a2
    return sup_v, integral


def cauchy_diagnostic(
    cfg: SimConfig,
    orders: list[int],
    seed: int | None = None,
    basis: EigenBasis | None = None,
) -> tuple[CauchyReport, list[TrajectoryRecord]]:
    """Run every order on one shared noise path and tabulate consecutive differences."""
    if not orders or any(b <= a for a, b in zip(orders, orders[1:])):
        raise ContractViolation(f"orders must be strictly increasing, got {orders}")
    seed = cfg.numerics.seed if seed is None else seed
    top = max(orders)
    full = basis if basis is not None else get_basis(cfg.domain, cfg.physics, top)
    records = []
    for n in orders:
        cfg_n = override_config(
            cfg, {"numerics.n_galerkin": n, "numerics.seed": seed, "output.cadence": 1}
        )
        ctx = prepare_run(cfg_n, basis=full)
        records.append(run_trajectory(ctx, trajectory=0))
    window = min(r.final_step for r in records)
    rows = []
    for low, high in zip(records, records[1:]):
        sup_v, integral = order_difference(full, high, low, window)
        rows.append(
            CauchyRow(n=low.n, m=high.n, window_steps=window, sup_v_norm2=sup_v, int_a_norm2=integral)
        )
    report = CauchyReport(orders=list(orders), seed=seed, window_steps=window, rows=rows)
    return report, records


# ---------------------------------------------------------------------------
# Itô energy identity
# ---------------------------------------------------------------------------

def ito_energy_residual(record: TrajectoryRecord, ctx: RunContext) -> np.ndarray:
    """Per-step defect of d‖U‖² + 2|AU|² dt = (2⟨F - N, AU⟩ + ‖σ‖²_V) dt + 2⟨A^½σ, A^½U⟩ dW."""
    if not record.has_every_step():
        raise SnapshotError("the energy residual needs a snapshot at every step (cadence 1)")
    lam = ctx.basis.lambdas
    dt = record.dt
    out = np.zeros(record.times.size - 1)
    for i in range(out.size):
        step = record.start_step + i
        c = record.snapshots[i]
        c_next = record.snapshots[i + 1]
        state = synthesize(ctx.basis, c)
        g = drift_coefficients(ctx, state, step * dt)
        sigma = sigma_projection(ctx, state)
        lhs = float(np.sum(lam * (c_next**2 - c**2)) + 2.0 * dt * np.sum(lam**2 * c**2))
        rhs = 2.0 * dt * float(np.sum(lam * c * g))
        if sigma.size:
            dw = record.increments[i]
            rhs += dt * float(np.sum(lam[None, :] * sigma**2))
            rhs += 2.0 * float(np.sum(lam * c * (sigma.T @ dw)))
        out[i] = lhs - rhs
    return out


# ---------------------------------------------------------------------------
# Manufactured solutions and linear fast path
# ---------------------------------------------------------------------------

def manufactured_forcing(
    ctx: RunContext,
    target: SpectralCoeffs,
    modulation: Callable[[float], float],
    modulation_rate: Callable[[float], float],
) -> Forcing:
    """F(t) making U(t) = φ(t) Σ s_k Φ_k an exact solution of the Galerkin system."""
    shape_field = synthesize(ctx.basis, target)
    a_shape = apply_a(ctx.bench, shape_field)
    num = ctx.config.numerics

    def field_fn(t: float) -> StateField:
        phi = modulation(t)
        exact = shape_field * phi
        nonlinear = apply_n(
            ctx.bench, exact, buoyancy=num.buoyancy, advection=num.advection, coriolis=num.coriolis
        )
        return shape_field * modulation_rate(t) + a_shape * phi + nonlinear

    return Forcing(field_fn=field_fn)


def linear_modal_ensemble(
    lambdas: np.ndarray,
    q: np.ndarray,
    dt: float,
    steps: int,
    trajectories: int,
    seed: int,
) -> np.ndarray:
    """Final coefficients (trajectories, K) of the decoupled linear system
    c ← (c + q_k ΔW^k) / (1 + dt λ_k) from c = 0, on the same streams as
    ``run_trajectory`` with modal additive noise."""
    q = np.asarray(q, dtype=float)
    K = q.size
    a = 1.0 / (1.0 + dt * np.asarray(lambdas[:K], dtype=float))
    out = np.empty((trajectories, K))
    for r in range(trajectories):
        dw = sample_increment_block(RngStream(seed, r), K, dt, 0, steps)
        for k in range(K):
            path = lfilter([a[k]], [1.0, -a[k]], q[k] * dw[:, k])
            out[r, k] = path[-1]
    return out
