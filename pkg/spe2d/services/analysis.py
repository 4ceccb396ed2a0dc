"""
Decomposition diagnostics: U = Û + Ǔ on a shared noise path.

Ǔ solves the linear system dǓ + AǓ dt = σ(U) dW from Ǔ(0) = 0 with the same
basis, scheme and increments as U. Û = U - Ǔ then satisfies a random PDE
without stochastic integral, which is what the anisotropic energy
identities for ∂zû and ∂xû are evaluated on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from spe2d.errors import SnapshotError
from spe2d.schemas.schemas import SimConfig
from spe2d.services.domain_fields import (
    StateField,
    ddx,
    ddz,
    get_grid,
    h1_norm,
    l2_norm,
    laplacian_x,
    laplacian_z,
    norm_h2,
    surface_inner,
    velocity_fluctuation,
)
from spe2d.services.integrator import (
    RunContext,
    RunStatus,
    TrajectoryRecord,
    prepare_run,
    run_trajectory,
    sigma_projection,
)
from spe2d.services.operators import apply_ap, apply_b, apply_e
from spe2d.services.settings import override_config
from spe2d.services.spectral import project_stack, synthesize

logger = logging.getLogger("spe2d")

TERM_NAMES = (
    "forcing",
    "buoyancy",
    "advection_hat",
    "advection_check",
    "cross_check_hat",
    "cross_hat_check",
    "coriolis",
)

IDENTITY_COLUMNS = (
    ["step", "t", "energy", "rate", "dissipation", "j_principal"]
    + [f"j_{name}" for name in TERM_NAMES]
    + ["residual"]
)


@dataclass(eq=False)
class DecompositionRun:
    """U from ``record``; Ǔ coefficients per step (frozen past a blowup)."""

    ctx: RunContext
    record: TrajectoryRecord
    check_coeffs: np.ndarray

    @property
    def size(self) -> int:
        return self.record.times.size

    @property
    def coeffs(self) -> np.ndarray:
        return self.record.snapshots

    @property
    def hat_coeffs(self) -> np.ndarray:
        return self.coeffs - self.check_coeffs[: self.size]

    def state(self, i: int) -> StateField:
        return synthesize(self.ctx.basis, self.coeffs[i])

    def check_state(self, i: int) -> StateField:
        return synthesize(self.ctx.basis, self.check_coeffs[i])

    def hat_state(self, i: int) -> StateField:
        return synthesize(self.ctx.basis, self.hat_coeffs[i])

    def time(self, i: int) -> float:
        return float(self.record.times[i])


def advance_linear(ctx: RunContext, record: TrajectoryRecord) -> np.ndarray:
    """Ǔ along ``record``: č ← (č + ⟨σ(U_j), Φ⟩ᵀ ΔW_j) / (1 + dt λ)."""
    if not record.has_every_step():
        raise SnapshotError("the linear companion needs a snapshot at every step")
    damping = 1.0 + ctx.dt * ctx.basis.lambdas
    total = record.times.size
    if record.status is RunStatus.BLOWUP:
        total = ctx.n_steps - record.start_step + 1
    out = np.zeros((total, ctx.n))
    for i in range(record.times.size - 1):
        sigma = sigma_projection(ctx, synthesize(ctx.basis, record.snapshots[i]))
        noise = sigma.T @ record.increments[i] if sigma.size else 0.0
        out[i + 1] = (out[i] + noise) / damping
    out[record.times.size :] = out[record.times.size - 1]
    return out


def run_coupled_decomposition(
    cfg: SimConfig, trajectory: int = 0, ctx: RunContext | None = None
) -> DecompositionRun:
    """Run U and its linear companion Ǔ on one noise path."""
    ctx = prepare_run(cfg) if ctx is None else ctx
    if ctx.config.output.cadence != 1:
        every_step = override_config(ctx.config, {"output.cadence": 1})
        ctx = RunContext(every_step, ctx.bench, ctx.basis, ctx.noise, ctx.forcing)
    record = run_trajectory(ctx, trajectory=trajectory)
    check = advance_linear(ctx, record)
    logger.debug(f"decomposition: trajectory {trajectory}, {record.times.size} steps, {record.status.value}")
    return DecompositionRun(ctx, record, check)


# ---------------------------------------------------------------------------
# Decomposed right-hand side
# ---------------------------------------------------------------------------

def decomposed_terms(run: DecompositionRun, i: int) -> np.ndarray:
    """Projected right-hand-side pieces at step i, one row per ``TERM_NAMES`` entry.

    Rows sum to P_n(F - N(U)) because B is bilinear and A_p, E are linear.
    """
    ctx = run.ctx
    num = ctx.config.numerics
    bench = ctx.bench
    hat = run.hat_state(i)
    check = run.check_state(i)
    full = hat + check
    shape = (3,) + ctx.basis.domain.shape
    rows = np.zeros((len(TERM_NAMES),) + shape)
    forced = ctx.forcing.field(run.time(i))
    if forced is not None:
        rows[0] = forced.stack()
    if num.buoyancy:
        rows[1] = -apply_ap(bench, full).stack()
    if num.advection:
        rows[2] = -apply_b(bench, hat, hat).stack()
        rows[3] = -apply_b(bench, check, check).stack()
        rows[4] = -apply_b(bench, check, hat).stack()
        rows[5] = -apply_b(bench, hat, check).stack()
    if num.coriolis:
        rows[6] = -apply_e(bench, full).stack()
    return project_stack(ctx.basis, ctx.n, rows)


def uhat_residual(run: DecompositionRun, start: int = 0, stop: int | None = None) -> np.ndarray:
    """|dÛ/dt + AÛ - (F - N(Û + Ǔ))|_H per step, with the forward difference for d/dt."""
    stop = run.size - 1 if stop is None else min(stop, run.size - 1)
    lam = run.ctx.basis.lambdas
    dt = run.ctx.dt
    hat = run.hat_coeffs
    out = np.zeros(max(stop - start, 0))
    for i in range(start, stop):
        rhs = decomposed_terms(run, i).sum(axis=0)
        defect = (hat[i + 1] - hat[i]) / dt + lam * hat[i] - rhs
        out[i - start] = float(np.sqrt(defect @ defect))
    return out


# ---------------------------------------------------------------------------
# Anisotropic identities
# ---------------------------------------------------------------------------

def _test_field(hat: StateField, direction: str) -> np.ndarray:
    lap = laplacian_z(hat.u) if direction == "z" else laplacian_x(hat.u)
    return -lap.values


def _identity_frame(run: DecompositionRun, direction: str) -> pd.DataFrame:
    ctx = run.ctx
    nu = ctx.config.physics.nu
    lam = ctx.basis.lambdas
    dt = ctx.dt
    hat = run.hat_coeffs
    shape = ctx.basis.domain.shape

    energies = np.empty(run.size)
    tests = []
    for i in range(run.size):
        state = run.hat_state(i)
        psi = _test_field(state, direction)
        energies[i] = float(np.sum(state.u.values * psi * _weights(run)))
        tests.append(psi)

    rows = []
    for i in range(run.size - 1):
        psi = tests[i]
        stack = np.zeros((1, 3) + shape)
        stack[0, 0] = psi
        pairing = project_stack(ctx.basis, ctx.n, stack)[0]
        terms = decomposed_terms(run, i) @ pairing
        dissipation = float((lam * hat[i]) @ pairing)
        principal = nu * float(np.sum(_weights(run) * velocity_fluctuation(-psi, ctx.basis.domain) ** 2))
        rate = (energies[i + 1] - energies[i]) / (2.0 * dt)
        row = {
            "step": int(run.record.start_step + i),
            "t": run.time(i),
            "energy": energies[i],
            "rate": rate,
            "dissipation": dissipation,
            "j_principal": principal,  # J₁; kept out of the residual sum
        }
        row.update({f"j_{name}": float(value) for name, value in zip(TERM_NAMES, terms)})
        row["residual"] = rate + dissipation - float(terms.sum())
        rows.append(row)
    return pd.DataFrame(rows, columns=IDENTITY_COLUMNS)


def _weights(run: DecompositionRun) -> np.ndarray:
    return get_grid(run.ctx.basis.domain).weights


def anisotropic_identity_residuals(run: DecompositionRun) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-step terms of ½ d/dt E + D = Σ J for E = ⟨û, -Δ_z û⟩ and ⟨û, -Δ_x û⟩.

    ``energy`` includes the surface Robin part α_v|û|²_{Γ_i} for the z identity.
    """
    return _identity_frame(run, "z"), _identity_frame(run, "x")


# ---------------------------------------------------------------------------
# Monitors and Gronwall coefficient processes
# ---------------------------------------------------------------------------

def _running(values: np.ndarray, rates: np.ndarray, dt: float) -> np.ndarray:
    sup = np.maximum.accumulate(values)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (rates[1:] + rates[:-1]))])
    return sup + integral


def decomposition_frame(run: DecompositionRun, c: float = 1.0) -> pd.DataFrame:
    """Per-step anisotropic diagnostics of Û, Ǔ and the processes R₁..R₄."""
    lam = run.ctx.basis.lambdas
    hat = run.hat_coeffs
    check = run.check_coeffs[: run.size]
    rows = []
    for i in range(run.size):
        hat_state = run.hat_state(i)
        check_state = run.check_state(i)
        dz = ddz(hat_state.u)
        dx = ddx(hat_state.u)
        hat_h = float(hat[i] @ hat[i])
        hat_v = float(lam @ hat[i] ** 2)
        check_v = float(lam @ check[i] ** 2)
        check_strong = norm_h2(check_state) ** 2
        dz_h1 = h1_norm(dz) ** 2
        rows.append(
            {
                "step": int(run.record.start_step + i),
                "t": run.time(i),
                "h_norm2": float(run.record.h_norm2[i]),
                "v_norm2": float(run.record.v_norm2[i]),
                "a_norm2": float(run.record.a_norm2[i]),
                "hat_h_norm2": hat_h,
                "hat_v_norm2": hat_v,
                "check_v_norm2": check_v,
                "check_a_norm2": float(lam**2 @ check[i] ** 2),
                "check_h2_norm2": check_strong,
                "dz_hat_l2": l2_norm(dz) ** 2,
                "dz_hat_h1": dz_h1,
                "dx_hat_l2": l2_norm(dx) ** 2,
                "dx_hat_h1": h1_norm(dx) ** 2,
                "hat_surface": surface_inner(hat_state.u, hat_state.u),
                "r1": hat_v + check_strong,
                "r2": c * (1.0 + hat_h) * hat_v + c * (1.0 + hat_v + check_v) * check_strong,
                "r3": c * (hat_h * hat_v + dz_h1),
                "r4": c * (hat_v + check_v + check_v * check_strong + hat_v * check_strong),
            }
        )
    return pd.DataFrame(rows)


def monitor_frame(run: DecompositionRun, frame: pd.DataFrame | None = None) -> pd.DataFrame:
    """X₁ (∂zû), X₂ (∂xû) and X (‖U‖² with ∫|AU|²) along the run."""
    frame = decomposition_frame(run) if frame is None else frame
    dt = run.ctx.dt
    x1 = _running(frame["dz_hat_l2"].to_numpy(), frame["dz_hat_h1"].to_numpy(), dt)
    x2 = _running(frame["dx_hat_l2"].to_numpy(), frame["dx_hat_h1"].to_numpy(), dt)
    x = run.record.sup_v + run.record.int_a
    return pd.DataFrame({"step": frame["step"], "t": frame["t"], "x1": x1, "x2": x2, "x": x})


def monitors_x(run: DecompositionRun, t: float | None = None) -> tuple[float, float, float]:
    """(X₁, X₂, X) at the last recorded time ≤ t (the final time by default)."""
    frame = monitor_frame(run)
    if t is not None:
        frame = frame[frame["t"] <= t + 1e-12]
    if frame.empty:
        return 0.0, 0.0, 0.0
    last = frame.iloc[-1]
    return float(last["x1"]), float(last["x2"]), float(last["x"])


def linear_companion_summary(run: DecompositionRun) -> dict[str, float]:
    """Pathwise sup|AǓ|², ∫|AǓ|² and sup|Ǔ|₍₂₎² of the linear companion."""
    lam = run.ctx.basis.lambdas
    a2 = (run.check_coeffs**2) @ lam**2
    strong = np.array([norm_h2(run.check_state(i)) ** 2 for i in range(run.check_coeffs.shape[0])])
    integral = float(np.sum(0.5 * run.ctx.dt * (a2[1:] + a2[:-1]))) if a2.size > 1 else 0.0
    return {
        "sup_check_a_norm2": float(a2.max()),
        "int_check_a_norm2": integral,
        "sup_check_h2_norm2": float(strong.max()),
    }
