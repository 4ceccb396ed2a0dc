"""
Domain geometry, grid fields, quadrature and discrete calculus.

The grid is the uniform node lattice of (0, L) x (-h, 0) including the
physical boundary: ``x_i = i*hx`` for ``i = 0..nx-1`` and ``z_j = -h + j*hz``
for ``j = 0..nz-1`` (row ``j = 0`` is the bottom, ``j = nz-1`` the surface).
Fields are stored as ``(nx, nz)`` arrays.

Quadrature is the trapezoidal rule in both directions. First derivatives are
the summation-by-parts pair of that rule (centered inside, one-sided on the
boundary), so ``<Dφ, ψ> + <φ, Dψ>`` equals the boundary quadrature exactly.
The Laplacian is the compact second difference ``-W⁻¹K`` where ``K`` is the
edge-difference stiffness form; boundary rows carry the Dirichlet, Neumann or
Robin closure selected by the field's ``bc_tag``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from spe2d.errors import ConstraintViolation, ContractViolation
from spe2d.schemas.schemas import DomainSpec, PhysicalParams

CONSTRAINT_TOL = 1e-12


class BCTag(str, Enum):
    VELOCITY = "velocity"
    TEMPERATURE = "temperature"
    UNCONSTRAINED = "unconstrained"


# ---------------------------------------------------------------------------
# Grid and quadrature
# ---------------------------------------------------------------------------

def _trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    x: np.ndarray
    z: np.ndarray
    wx: np.ndarray
    wz: np.ndarray
    weights: np.ndarray
    dirichlet: np.ndarray = field(repr=False)

    @property
    def hx(self) -> float:
        return self.domain.hx

    @property
    def hz(self) -> float:
        return self.domain.hz

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.z, indexing="ij")

    def boundary_sets(self) -> dict[str, np.ndarray]:
        """Disjoint node index sets: sides (corners included), surface, bottom."""
        nx, nz = self.domain.shape
        mask = {name: np.zeros((nx, nz), dtype=bool) for name in ("lateral", "surface", "bottom")}
        mask["lateral"][[0, -1], :] = True
        mask["surface"][1:-1, -1] = True
        mask["bottom"][1:-1, 0] = True
        return {name: np.argwhere(m) for name, m in mask.items()}


@lru_cache(maxsize=32)
def get_grid(domain: DomainSpec) -> Grid:
    nx, nz = domain.shape
    x = np.linspace(0.0, domain.length, nx)
    z = np.linspace(-domain.depth, 0.0, nz)
    wx = _trapezoid_weights(nx, domain.hx)
    wz = _trapezoid_weights(nz, domain.hz)
    dirichlet = np.zeros((nx, nz), dtype=bool)
    dirichlet[[0, -1], :] = True
    dirichlet[:, 0] = True
    for arr in (x, z, wx, wz, dirichlet):
        arr.flags.writeable = False
    weights = np.outer(wx, wz)
    weights.flags.writeable = False
    return Grid(domain, x, z, wx, wz, weights, dirichlet)


# ---------------------------------------------------------------------------
# Field types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Immutable node values of one scalar on a domain's grid."""

    values: np.ndarray
    domain: DomainSpec
    bc_tag: BCTag = BCTag.UNCONSTRAINED

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.domain.shape:
            raise ContractViolation(
                f"field shape {values.shape} does not match grid {self.domain.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bc_tag", BCTag(self.bc_tag))

    @classmethod
    def zeros(cls, domain: DomainSpec, bc_tag: BCTag = BCTag.UNCONSTRAINED) -> ScalarField:
        return cls(np.zeros(domain.shape), domain, bc_tag)

    def with_values(self, values: np.ndarray, bc_tag: BCTag | None = None) -> ScalarField:
        return ScalarField(values, self.domain, self.bc_tag if bc_tag is None else bc_tag)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def __add__(self, other: ScalarField) -> ScalarField:
        _same_domain(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: ScalarField) -> ScalarField:
        _same_domain(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> ScalarField:
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> ScalarField:
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class StateField:
    """Prognostic triple U = (u, v, T)."""

    u: ScalarField
    v: ScalarField
    temp: ScalarField

    def __post_init__(self):
        _same_domain(self.u, self.v, self.temp)

    @property
    def domain(self) -> DomainSpec:
        return self.u.domain

    @classmethod
    def from_arrays(cls, domain: DomainSpec, u, v, temp) -> StateField:
        return cls(
            ScalarField(u, domain, BCTag.VELOCITY),
            ScalarField(v, domain, BCTag.VELOCITY),
            ScalarField(temp, domain, BCTag.TEMPERATURE),
        )

    @classmethod
    def from_stack(cls, domain: DomainSpec, stack: np.ndarray) -> StateField:
        return cls.from_arrays(domain, stack[0], stack[1], stack[2])

    @classmethod
    def zeros(cls, domain: DomainSpec) -> StateField:
        z = np.zeros(domain.shape)
        return cls.from_arrays(domain, z, z, z)

    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return (self.u, self.v, self.temp)

    def stack(self) -> np.ndarray:
        return np.stack([self.u.values, self.v.values, self.temp.values])

    def is_finite(self) -> bool:
        return all(c.is_finite() for c in self.components())

    def __add__(self, other: StateField) -> StateField:
        return StateField.from_stack(self.domain, self.stack() + other.stack())

    def __sub__(self, other: StateField) -> StateField:
        return StateField.from_stack(self.domain, self.stack() - other.stack())

    def __mul__(self, scalar: float) -> StateField:
        return StateField.from_stack(self.domain, self.stack() * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> StateField:
        return StateField.from_stack(self.domain, -self.stack())


def _same_domain(*items) -> DomainSpec:
    domain = items[0].domain
    for item in items[1:]:
        if item.domain != domain:
            raise ContractViolation("fields live on different domains")
    return domain


# ---------------------------------------------------------------------------
# Vertical averaging and projections
# ---------------------------------------------------------------------------

def column_integral(phi: ScalarField) -> np.ndarray:
    """Trapezoidal ∫_{-h}^0 φ dz per x column."""
    return phi.values @ get_grid(phi.domain).wz


def vertical_average(phi: ScalarField) -> ScalarField:
    col = column_integral(phi) / phi.domain.depth
    return phi.with_values(np.repeat(col[:, None], phi.domain.nz, axis=1), BCTag.UNCONSTRAINED)


def fluctuation(phi: ScalarField) -> ScalarField:
    return phi.with_values(phi.values - vertical_average(phi).values)


def project_h(u: ScalarField, v: ScalarField, temp: ScalarField) -> StateField:
    """Π(u, v, T) = (Qu, v, T)."""
    domain = _same_domain(u, v, temp)
    return StateField.from_arrays(domain, fluctuation(u).values, v.values, temp.values)


def _velocity_mask(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.where(grid.dirichlet, 0.0, values)


def velocity_fluctuation(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """W-orthogonal projection onto velocity DOFs with zero column integral.

    Dirichlet nodes are zeroed; on the remaining rows the weighted mean over
    ``j >= 1`` is removed, so the full trapezoidal column integral vanishes.
    """
    grid = get_grid(domain)
    masked = _velocity_mask(values, grid)
    span = grid.wz[1:].sum()
    mean = masked[:, 1:] @ grid.wz[1:] / span
    out = masked.copy()
    out[:, 1:] -= mean[:, None]
    return _velocity_mask(out, grid)


def project_v(state: StateField) -> StateField:
    """Projection onto the discrete constrained velocity space (Dirichlet rows zero)."""
    grid = get_grid(state.domain)
    return StateField.from_arrays(
        state.domain,
        velocity_fluctuation(state.u.values, state.domain),
        _velocity_mask(state.v.values, grid),
        state.temp.values,
    )


def constraint_residual(state: StateField) -> float:
    """Largest column integral of u relative to h * max|u| (0 for u ≡ 0)."""
    scale = state.domain.depth * float(np.abs(state.u.values).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(column_integral(state.u)).max()) / scale


def check_constraint(state: StateField, tol: float = CONSTRAINT_TOL) -> None:
    residual = constraint_residual(state)
    if residual > tol:
        raise ConstraintViolation(
            f"column integral of u is {residual:.3e} x h*max|u| (tolerance {tol:.1e})",
            residual,
        )


# ---------------------------------------------------------------------------
# Inner products and norms
# ---------------------------------------------------------------------------

def l2_inner(phi: ScalarField, psi: ScalarField) -> float:
    _same_domain(phi, psi)
    return float(np.sum(get_grid(phi.domain).weights * phi.values * psi.values))


def l2_norm(phi: ScalarField) -> float:
    return float(np.sqrt(max(l2_inner(phi, phi), 0.0)))


def inner_h(a: StateField, b: StateField) -> float:
    _same_domain(a, b)
    w = get_grid(a.domain).weights
    return float(np.sum(w * a.stack() * b.stack()))


def norm_h(state: StateField) -> float:
    return float(np.sqrt(max(inner_h(state, state), 0.0)))


def surface_inner(phi: ScalarField, psi: ScalarField) -> float:
    """Trapezoidal ∫_{Γ_i} φ ψ dx."""
    wx = get_grid(phi.domain).wx
    return float(np.sum(wx * phi.values[:, -1] * psi.values[:, -1]))


def _edge_x(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    da = np.diff(a, axis=0)
    db = np.diff(b, axis=0)
    return float(np.sum((da * db) @ grid.wz) / grid.hx)


def _edge_z(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    da = np.diff(a, axis=1)
    db = np.diff(b, axis=1)
    return float(grid.wx @ (da * db).sum(axis=1) / grid.hz)


def x_energy(phi: ScalarField, psi: ScalarField | None = None) -> float:
    """Edge form of ∫ ∂xφ ∂xψ (velocity-type fields read as zero on Γ_l ∪ Γ_b)."""
    grid = get_grid(phi.domain)
    psi = phi if psi is None else psi
    a, b = _masked_pair(phi, psi, grid)
    return _edge_x(a, b, grid)


def z_energy(phi: ScalarField, psi: ScalarField | None = None) -> float:
    grid = get_grid(phi.domain)
    psi = phi if psi is None else psi
    a, b = _masked_pair(phi, psi, grid)
    return _edge_z(a, b, grid)


def _masked_pair(phi: ScalarField, psi: ScalarField, grid: Grid):
    a, b = phi.values, psi.values
    if phi.bc_tag is BCTag.VELOCITY:
        a = _velocity_mask(a, grid)
    if psi.bc_tag is BCTag.VELOCITY:
        b = _velocity_mask(b, grid)
    return a, b


def _component_form(phi: ScalarField, psi: ScalarField, alpha: float) -> float:
    grid = get_grid(phi.domain)
    a, b = _masked_pair(phi, psi, grid)
    surface = float(np.sum(grid.wx * a[:, -1] * b[:, -1]))
    return _edge_x(a, b, grid) + _edge_z(a, b, grid) + alpha * surface


def inner_v(a: StateField, b: StateField, params: PhysicalParams) -> float:
    """ν((u,u♯)) + ν((v,v♯)) + μ((T,T♯)) including the surface Robin terms."""
    domain = _same_domain(a, b)
    velocity = _component_form(a.u, b.u, domain.alpha_v) + _component_form(a.v, b.v, domain.alpha_v)
    heat = _component_form(a.temp, b.temp, domain.alpha_t)
    return params.nu * velocity + params.mu * heat


def norm_v(state: StateField, params: PhysicalParams) -> float:
    return float(np.sqrt(max(inner_v(state, state, params), 0.0)))


# ---------------------------------------------------------------------------
# Discrete derivatives
# ---------------------------------------------------------------------------

def sbp_diff(values: np.ndarray, step: float, axis: int) -> np.ndarray:
    a = np.moveaxis(values, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2.0 * step)
    out[0] = (a[1] - a[0]) / step
    out[-1] = (a[-1] - a[-2]) / step
    return np.moveaxis(out, 0, axis)


def ddx(phi: ScalarField) -> ScalarField:
    """SBP first derivative in x; boundary closure is the same for every tag."""
    return phi.with_values(sbp_diff(phi.values, phi.domain.hx, 0), BCTag.UNCONSTRAINED)


def ddz(phi: ScalarField) -> ScalarField:
    return phi.with_values(sbp_diff(phi.values, phi.domain.hz, 1), BCTag.UNCONSTRAINED)


def boundary_flux_x(phi: ScalarField, psi: ScalarField) -> float:
    """Σ_j wz_j [φψ]_{x=0}^{x=L}, the exact SBP remainder of ddx."""
    wz = get_grid(phi.domain).wz
    prod = phi.values * psi.values
    return float(wz @ (prod[-1] - prod[0]))


def boundary_flux_z(phi: ScalarField, psi: ScalarField) -> float:
    wx = get_grid(phi.domain).wx
    prod = phi.values * psi.values
    return float(wx @ (prod[:, -1] - prod[:, 0]))


def _second_difference_free(values: np.ndarray, step: float, axis: int) -> np.ndarray:
    a = np.moveaxis(values, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / step**2
    out[0] = (2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]) / step**2
    out[-1] = (2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]) / step**2
    return np.moveaxis(out, 0, axis)


def second_difference(phi: ScalarField, axis: str) -> ScalarField:
    """Boundary-condition-free second derivative (one-sided second order on the edges)."""
    step = phi.domain.hx if axis == "x" else phi.domain.hz
    values = _second_difference_free(phi.values, step, 0 if axis == "x" else 1)
    return phi.with_values(values, BCTag.UNCONSTRAINED)


def _require_bc(phi: ScalarField) -> None:
    if phi.bc_tag is BCTag.UNCONSTRAINED:
        raise ContractViolation("laplacian needs a velocity- or temperature-type field")


def _compact_x(a: np.ndarray, hx: float, neumann: bool) -> np.ndarray:
    out = np.zeros_like(a)
    out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / hx**2
    if neumann:
        out[0] = 2.0 * (a[1] - a[0]) / hx**2
        out[-1] = 2.0 * (a[-2] - a[-1]) / hx**2
    return out


def _compact_z(a: np.ndarray, hz: float, alpha: float, neumann_bottom: bool) -> np.ndarray:
    out = np.zeros_like(a)
    out[:, 1:-1] = (a[:, 2:] - 2.0 * a[:, 1:-1] + a[:, :-2]) / hz**2
    out[:, -1] = 2.0 * (a[:, -2] - a[:, -1]) / hz**2 - 2.0 * alpha * a[:, -1] / hz
    if neumann_bottom:
        out[:, 0] = 2.0 * (a[:, 1] - a[:, 0]) / hz**2
    return out


def laplacian_x(phi: ScalarField) -> ScalarField:
    """x-part of the BC-aware Laplacian."""
    _require_bc(phi)
    grid = get_grid(phi.domain)
    if phi.bc_tag is BCTag.VELOCITY:
        out = _compact_x(_velocity_mask(phi.values, grid), grid.hx, neumann=False)
        out = _velocity_mask(out, grid)
    else:
        out = _compact_x(phi.values, grid.hx, neumann=True)
    return phi.with_values(out, BCTag.UNCONSTRAINED)


def laplacian_z(phi: ScalarField) -> ScalarField:
    _require_bc(phi)
    grid = get_grid(phi.domain)
    domain = phi.domain
    if phi.bc_tag is BCTag.VELOCITY:
        out = _compact_z(_velocity_mask(phi.values, grid), grid.hz, domain.alpha_v, neumann_bottom=False)
        out = _velocity_mask(out, grid)
    else:
        out = _compact_z(phi.values, grid.hz, domain.alpha_t, neumann_bottom=True)
    return phi.with_values(out, BCTag.UNCONSTRAINED)


def laplacian(phi: ScalarField) -> ScalarField:
    """Δφ with the closure of ``phi.bc_tag``.

    velocity: φ = 0 on Γ_l ∪ Γ_b (those nodes read as and return zero),
    ∂zφ + α_v φ = 0 on Γ_i. temperature: Neumann on Γ_l ∪ Γ_b,
    ∂zφ + α_T φ = 0 on Γ_i.
    """
    return phi.with_values(laplacian_x(phi).values + laplacian_z(phi).values, BCTag.UNCONSTRAINED)


# ---------------------------------------------------------------------------
# Higher norms
# ---------------------------------------------------------------------------

def h1_norm(phi: ScalarField) -> float:
    """sqrt(|φ|² + |Dxφ|² + |Dzφ|²) with the SBP derivatives."""
    return float(np.sqrt(l2_norm(phi) ** 2 + l2_norm(ddx(phi)) ** 2 + l2_norm(ddz(phi)) ** 2))


def h2_norm(phi: ScalarField) -> float:
    """Classical H² norm of one scalar: field, first and second derivatives."""
    dx = ddx(phi)
    parts = [
        phi,
        dx,
        ddz(phi),
        second_difference(phi, "x"),
        second_difference(phi, "z"),
        ddz(dx),
    ]
    return float(np.sqrt(sum(l2_norm(p) ** 2 for p in parts)))


def norm_h2(state: StateField) -> float:
    return float(np.sqrt(sum(h2_norm(c) ** 2 for c in state.components())))


# ---------------------------------------------------------------------------
# Sampling and symmetry helpers
# ---------------------------------------------------------------------------

def random_smooth_state(
    domain: DomainSpec,
    rng: np.random.Generator,
    order: int = 3,
    amplitude: float = 1.0,
    space: str = "V",
) -> StateField:
    """Random trigonometric field with boundary-compatible factors.

    Coefficients are drawn before the grid is touched, so the same generator
    state yields the same continuum field on every resolution. Velocity
    factors vanish on Γ_l ∪ Γ_b; temperature factors satisfy the Neumann
    conditions there. ``space="V"`` applies the constrained-velocity
    projection, ``"H"`` only removes the column mean of u.
    """
    coeffs = rng.uniform(-1.0, 1.0, size=(3, order, order))
    x, z = get_grid(domain).meshgrid()
    L, h = domain.length, domain.depth
    p = np.arange(1, order + 1)
    sx = np.sin(np.pi * p[:, None, None] * x[None] / L)
    sz = np.sin((2 * p[:, None, None] - 1) * np.pi * (z[None] + h) / (2 * h))
    cx = np.cos(np.pi * (p[:, None, None] - 1) * x[None] / L)
    cz = np.cos(np.pi * (p[:, None, None] - 1) * (z[None] + h) / h)

    u = amplitude * np.einsum("pq,pij,qij->ij", coeffs[0], sx, sz)
    v = amplitude * np.einsum("pq,pij,qij->ij", coeffs[1], sx, sz)
    temp = amplitude * np.einsum("pq,pij,qij->ij", coeffs[2], cx, cz)
    raw = StateField.from_arrays(domain, u, v, temp)
    if space == "V":
        return project_v(raw)
    if space == "H":
        return project_h(raw.u, raw.v, raw.temp)
    raise ContractViolation(f"unknown sample space {space!r}")


def reflect_x(state: StateField) -> StateField:
    """x ↦ L - x with u, v odd and T even."""
    s = state.stack()[:, ::-1, :]
    return StateField.from_arrays(state.domain, -s[0], -s[1], s[2])
