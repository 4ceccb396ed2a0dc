"""
Discrete operators of the hydrostatic system on an ``OperatorBench``.

The bench holds the assembled sparse stiffness blocks and the constrained
velocity projector for one (domain, physics) pair. The ``apply_*`` functions
act on ``StateField`` values through stencils; ``apply_a_assembled`` is the
matrix path for the same A and exists to cross-check the stencils.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from spe2d.errors import ConstraintViolation, ContractViolation
from spe2d.schemas.schemas import DomainSpec, PhysicalParams
from spe2d.services.domain_fields import (
    CONSTRAINT_TOL,
    BCTag,
    ScalarField,
    StateField,
    column_integral,
    ddx,
    fluctuation,
    get_grid,
    laplacian,
    sbp_diff,
    velocity_fluctuation,
)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _stiffness_1d(n: int, step: float, robin_top: float = 0.0) -> sp.csr_matrix:
    main = np.full(n, 2.0 / step)
    main[0] = main[-1] = 1.0 / step
    main[-1] += robin_top
    off = np.full(n - 1, -1.0 / step)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True, eq=False)
class OperatorBench:
    domain: DomainSpec
    params: PhysicalParams
    velocity_dofs: np.ndarray
    stiffness_velocity: sp.csr_matrix
    stiffness_temperature: sp.csr_matrix
    mass_velocity: np.ndarray
    mass_temperature: np.ndarray
    velocity_projector: sp.csr_matrix
    velocity_complement: sp.csr_matrix

    @property
    def n_velocity_dofs(self) -> int:
        return int(self.velocity_dofs.size)

    @property
    def n_temperature_dofs(self) -> int:
        return int(self.mass_temperature.size)


def assemble_bench(domain: DomainSpec, params: PhysicalParams) -> OperatorBench:
    grid = get_grid(domain)
    nx, nz = domain.shape
    wx_diag = sp.diags(grid.wx)
    wz_diag = sp.diags(grid.wz)
    sx = _stiffness_1d(nx, domain.hx)

    def full_stiffness(alpha: float) -> sp.csr_matrix:
        sz = _stiffness_1d(nz, domain.hz, robin_top=alpha)
        return sp.csr_matrix(sp.kron(sx, wz_diag) + sp.kron(wx_diag, sz))

    dofs = np.flatnonzero(~grid.dirichlet.ravel())
    k_velocity = full_stiffness(domain.alpha_v)[dofs][:, dofs].tocsr()
    k_temperature = full_stiffness(domain.alpha_t)
    weights = grid.weights.ravel()

    # Column-mean removal over the j >= 1 rows of every interior column.
    wz_dof = grid.wz[1:]
    mean_block = np.outer(np.ones(nz - 1), wz_dof / wz_dof.sum())
    complement = sp.kron(sp.identity(nx - 2), sp.csr_matrix(mean_block)).tocsr()
    projector = (sp.identity(dofs.size) - complement).tocsr()

    for arr in (dofs, weights):
        arr.flags.writeable = False
    return OperatorBench(
        domain=domain,
        params=params,
        velocity_dofs=dofs,
        stiffness_velocity=k_velocity,
        stiffness_temperature=k_temperature,
        mass_velocity=weights[dofs],
        mass_temperature=weights,
        velocity_projector=projector,
        velocity_complement=complement,
    )


@lru_cache(maxsize=16)
def get_bench(domain: DomainSpec, params: PhysicalParams) -> OperatorBench:
    """Cached bench per (domain, physics)."""
    return assemble_bench(domain, params)


def _check_domain(bench: OperatorBench, *states: StateField) -> None:
    for state in states:
        if state.domain != bench.domain:
            raise ContractViolation("state domain does not match the operator bench")


def _check_constrained(u: ScalarField, tol: float = CONSTRAINT_TOL) -> None:
    scale = u.domain.depth * float(np.abs(u.values).max())
    if scale == 0.0:
        return
    residual = float(np.abs(column_integral(u)).max()) / scale
    if residual > tol:
        raise ConstraintViolation(
            f"u is not vertically mean-free (relative column integral {residual:.3e})", residual
        )


# ---------------------------------------------------------------------------
# Diagnostic vertical velocity
# ---------------------------------------------------------------------------

def integrate_from_surface(values: np.ndarray, hz: float) -> np.ndarray:
    """Cumulative trapezoid ∫_z^0 f dz̄ per column; zero on the surface row."""
    increments = 0.5 * hz * (values[:, :-1] + values[:, 1:])
    out = np.zeros_like(values)
    out[:, :-1] = np.cumsum(increments[:, ::-1], axis=1)[:, ::-1]
    return out


def w_diagnostic(u: ScalarField, check: bool = True) -> ScalarField:
    """w(x, z) = ∫_z^0 ∂x u dz̄. Vanishes on the bottom whenever ∫u dz = 0."""
    if check:
        _check_constrained(u)
    w = integrate_from_surface(ddx(u).values, u.domain.hz)
    return ScalarField(w, u.domain, BCTag.UNCONSTRAINED)


# ---------------------------------------------------------------------------
# Linear operators
# ---------------------------------------------------------------------------

def apply_a(bench: OperatorBench, state: StateField) -> StateField:
    """AU = (-ν Q Δu, -ν Δv, -μ ΔT) with Q the constrained-velocity projector."""
    _check_domain(bench, state)
    nu, mu = bench.params.nu, bench.params.mu
    u = velocity_fluctuation(-nu * laplacian(state.u).values, bench.domain)
    v = -nu * laplacian(state.v).values
    temp = -mu * laplacian(state.temp).values
    return StateField.from_arrays(bench.domain, u, v, temp)


def apply_a_assembled(bench: OperatorBench, state: StateField) -> StateField:
    """Matrix path: the assembled blocks applied to the flattened state."""
    _check_domain(bench, state)
    nu, mu = bench.params.nu, bench.params.mu
    dofs = bench.velocity_dofs
    shape = bench.domain.shape

    def velocity_block(values: np.ndarray, constrain: bool) -> np.ndarray:
        out = nu * (bench.stiffness_velocity @ values.ravel()[dofs]) / bench.mass_velocity
        if constrain:
            out = bench.velocity_projector @ out
        full = np.zeros(shape[0] * shape[1])
        full[dofs] = out
        return full.reshape(shape)

    u = velocity_block(state.u.values, constrain=True)
    v = velocity_block(state.v.values, constrain=False)
    temp = mu * (bench.stiffness_temperature @ state.temp.values.ravel()) / bench.mass_temperature
    return StateField.from_arrays(bench.domain, u, v, temp.reshape(shape))


def apply_ap(bench: OperatorBench, state: StateField) -> StateField:
    """Buoyancy coupling (-β_T g ρ₀ Q ∫_z^0 ∂x T dz̄, 0, 0)."""
    _check_domain(bench, state)
    p = bench.params
    inner = integrate_from_surface(ddx(state.temp).values, bench.domain.hz)
    u = -p.beta_t * p.g * p.rho0 * fluctuation(ScalarField(inner, bench.domain)).values
    zero = np.zeros(bench.domain.shape)
    return StateField.from_arrays(bench.domain, u, zero, zero)


def apply_e(bench: OperatorBench, state: StateField) -> StateField:
    """Coriolis (-Q f v, f u, 0)."""
    _check_domain(bench, state)
    f = bench.params.f
    u = -f * fluctuation(state.v).values
    v = f * state.u.values
    return StateField.from_arrays(bench.domain, u, v, np.zeros(bench.domain.shape))


# ---------------------------------------------------------------------------
# Advection
# ---------------------------------------------------------------------------

def _horizontal(u: np.ndarray, phi: np.ndarray, hx: float) -> np.ndarray:
    return 0.5 * (u * sbp_diff(phi, hx, 0) + sbp_diff(u * phi, hx, 0))


def _vertical(w: np.ndarray, phi: np.ndarray, hz: float) -> np.ndarray:
    return 0.5 * (w * sbp_diff(phi, hz, 1) + sbp_diff(w * phi, hz, 1))


def horizontal_advection(u: ScalarField, phi: ScalarField) -> ScalarField:
    """½(u ∂xφ + ∂x(uφ))."""
    return ScalarField(_horizontal(u.values, phi.values, u.domain.hx), u.domain)


def vertical_advection(u: ScalarField, phi: ScalarField, check: bool = True) -> ScalarField:
    """½(w(u) ∂zφ + ∂z(w(u)φ))."""
    w = w_diagnostic(u, check=check).values
    return ScalarField(_vertical(w, phi.values, u.domain.hz), u.domain)


def apply_b(bench: OperatorBench, state: StateField, other: StateField) -> StateField:
    """Skew-symmetric B(U, U♯); Q on the first component.

    ⟨B(U, U♯), U♯⟩ vanishes to round-off whenever u is mean-free in z and
    zero on the lateral walls.
    """
    _check_domain(bench, state, other)
    hx, hz = bench.domain.hx, bench.domain.hz
    u = state.u.values
    w = w_diagnostic(state.u).values

    def advect(phi: np.ndarray) -> np.ndarray:
        return _horizontal(u, phi, hx) + _vertical(w, phi, hz)

    bu = fluctuation(ScalarField(advect(other.u.values), bench.domain)).values
    return StateField.from_arrays(bench.domain, bu, advect(other.v.values), advect(other.temp.values))


def apply_n(
    bench: OperatorBench,
    state: StateField,
    *,
    buoyancy: bool = True,
    advection: bool = True,
    coriolis: bool = True,
) -> StateField:
    """N(U) = A_p U + B(U, U) + E U with optional terms switched off."""
    _check_domain(bench, state)
    total = np.zeros((3,) + bench.domain.shape)
    if buoyancy:
        total += apply_ap(bench, state).stack()
    if advection:
        total += apply_b(bench, state, state).stack()
    if coriolis:
        total += apply_e(bench, state).stack()
    return StateField.from_stack(bench.domain, total)


# ---------------------------------------------------------------------------
# Diagnostic recovery
# ---------------------------------------------------------------------------

class Diagnostics(NamedTuple):
    w: ScalarField
    rho: ScalarField
    p_anomaly: ScalarField


def recover_diagnostics(bench: OperatorBench, state: StateField) -> Diagnostics:
    """w, density from the linear equation of state, and p - p_s (hydrostatic)."""
    _check_domain(bench, state)
    p = bench.params
    w = w_diagnostic(state.u)
    buoyant = 1.0 - p.beta_t * (state.temp.values - p.t0)
    rho = p.rho0 * buoyant
    pressure = -p.g * p.rho0 * integrate_from_surface(buoyant, bench.domain.hz)
    return Diagnostics(
        w=w,
        rho=ScalarField(rho, bench.domain),
        p_anomaly=ScalarField(pressure, bench.domain),
    )
