"""
Eigenbasis of the discrete Stokes-type operator and spectral projections.

A is block diagonal over (u, v, T), so every eigenvector lives in a single
component. Each block is solved as a dense symmetric problem after the
diagonal mass scaling ``K̃ = M^{-1/2} K M^{-1/2}``; the u-block is first
conjugated by the constrained-velocity projector and its null modes
(the z-constant complement) are discarded. The three spectra are merged with
a stable sort on the eigenvalue.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from spe2d.errors import ContractViolation, EigenSolverError
from spe2d.schemas.schemas import DomainSpec, PhysicalParams, PoincareReport
from spe2d.services.domain_fields import StateField, get_grid, inner_v, velocity_fluctuation
from spe2d.services.operators import OperatorBench, apply_a, get_bench

logger = logging.getLogger("spe2d")

COMPONENTS = ("u", "v", "temp")
GRAM_TOL = 1e-10
NULL_MODE_RATIO = 1e-8

SpectralCoeffs = np.ndarray


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Merged eigenpairs: ``lambdas[k]``, ``components[k]`` (0=u, 1=v, 2=T),
    ``modes[k]`` the (nx, nz) node values of Φ_k."""

    domain: DomainSpec
    params: PhysicalParams
    lambdas: np.ndarray
    components: np.ndarray
    modes: np.ndarray
    gram_tolerance: float = GRAM_TOL

    def __post_init__(self):
        for arr in (self.lambdas, self.components, self.modes):
            arr.flags.writeable = False
        weighted = self.modes * get_grid(self.domain).weights[None]
        weighted.flags.writeable = False
        object.__setattr__(self, "_weighted", weighted.reshape(len(self.lambdas), -1))

    @property
    def size(self) -> int:
        return int(self.lambdas.size)

    def truncate(self, n: int) -> EigenBasis:
        _check_order(self, n)
        return EigenBasis(
            self.domain,
            self.params,
            self.lambdas[:n].copy(),
            self.components[:n].copy(),
            self.modes[:n].copy(),
            self.gram_tolerance,
        )

    def mode(self, k: int) -> StateField:
        """Φ_k as a state (0-based index)."""
        stack = np.zeros((3,) + self.domain.shape)
        stack[self.components[k]] = self.modes[k]
        return StateField.from_stack(self.domain, stack)

    def component_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.components == i)) for i, name in enumerate(COMPONENTS)}


def _check_order(basis: EigenBasis, n: int) -> None:
    if not 0 <= n <= basis.size:
        raise ContractViolation(f"order {n} outside 0..{basis.size}")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _largest_eigenvalue(matrix: np.ndarray) -> float:
    last = matrix.shape[0] - 1
    return float(scipy.linalg.eigh(matrix, eigvals_only=True, subset_by_index=[last, last])[0])


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _solve_block(
    stiffness: np.ndarray,
    mass: np.ndarray,
    count: int,
    complement: np.ndarray | None,
    name: str,
) -> tuple[np.ndarray, np.ndarray]:
    scale = 1.0 / np.sqrt(mass)
    k_tilde = stiffness * scale[:, None] * scale[None, :]
    n_null = 0
    if complement is not None:
        # M^{1/2} P M^{-1/2} is the symmetric twin of the mean-removal projector.
        p_tilde = complement * np.sqrt(mass)[:, None] * scale[None, :]
        q_tilde = np.eye(len(mass)) - p_tilde
        k_tilde = q_tilde @ k_tilde @ q_tilde
        k_tilde = 0.5 * (k_tilde + k_tilde.T)
        n_null = int(round(np.trace(p_tilde)))
    upper = min(len(mass), count + n_null) - 1
    try:
        values, vectors = scipy.linalg.eigh(k_tilde, subset_by_index=[0, upper])
        lam_max = _largest_eigenvalue(k_tilde)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"{name}-block eigensolve failed: {exc}") from exc

    if complement is not None:
        keep = values >= NULL_MODE_RATIO * lam_max
        values, vectors = values[keep], vectors[:, keep]
    residual = np.linalg.norm(k_tilde @ vectors - vectors * values[None, :], axis=0)
    tolerance = 1e-8 * max(1.0, lam_max)
    if residual.size and residual.max() > tolerance:
        raise EigenSolverError(
            f"{name}-block eigenpairs inaccurate", {"max_residual": float(residual.max())}
        )
    return values[:count], _fix_signs(vectors[:, :count] * scale[:, None])


def build_eigenbasis(bench: OperatorBench, n_max: int, threads: int = 3) -> EigenBasis:
    """The ``n_max`` smallest eigenpairs of A merged across the three blocks."""
    total = 2 * bench.n_velocity_dofs - (bench.domain.nx - 2) + bench.n_temperature_dofs
    if not 1 <= n_max <= total:
        raise ContractViolation(f"n_max={n_max} outside 1..{total} constrained degrees of freedom")

    nu, mu = bench.params.nu, bench.params.mu
    kv = nu * bench.stiffness_velocity.toarray()
    kt = mu * bench.stiffness_temperature.toarray()
    complement = bench.velocity_complement.toarray()
    jobs = {
        0: (kv, bench.mass_velocity, n_max, complement, "u"),
        1: (kv, bench.mass_velocity, n_max, None, "v"),
        2: (kt, bench.mass_temperature, n_max, None, "temp"),
    }
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {comp: pool.submit(_solve_block, *args) for comp, args in jobs.items()}
        solved = {comp: fut.result() for comp, fut in futures.items()}

    lambdas = np.concatenate([solved[c][0] for c in range(3)])
    comps = np.concatenate([np.full(solved[c][0].size, c, dtype=np.int8) for c in range(3)])
    order = np.argsort(lambdas, kind="stable")[:n_max]

    nx, nz = bench.domain.shape
    modes = np.zeros((n_max, nx, nz))
    starts = {0: 0, 1: solved[0][0].size, 2: solved[0][0].size + solved[1][0].size}
    for slot, idx in enumerate(order):
        comp = int(comps[idx])
        column = solved[comp][1][:, idx - starts[comp]]
        flat = np.zeros(nx * nz)
        if comp == 2:
            flat[:] = column
        else:
            flat[bench.velocity_dofs] = column
        modes[slot] = flat.reshape(nx, nz)

    basis = EigenBasis(bench.domain, bench.params, lambdas[order].copy(), comps[order].copy(), modes)
    gram = gram_residual(basis)
    if gram > GRAM_TOL:
        raise EigenSolverError("eigenbasis is not orthonormal", {"gram_residual": gram})
    logger.debug(f"eigenbasis: {n_max} modes, gram residual {gram:.2e}")
    return basis


@lru_cache(maxsize=8)
def get_basis(domain: DomainSpec, params: PhysicalParams, n_max: int) -> EigenBasis:
    """Cached basis per (domain, physics, order)."""
    return build_eigenbasis(get_bench(domain, params), n_max)


def gram_residual(basis: EigenBasis) -> float:
    flat = basis.modes.reshape(basis.size, -1)
    gram = basis._weighted @ flat.T
    return float(np.abs(gram - np.eye(basis.size)).max()) if basis.size else 0.0


def rayleigh_residuals(basis: EigenBasis, bench: OperatorBench) -> np.ndarray:
    """|⟨AΦ_k, Φ_k⟩ - λ_k| / λ_k per mode."""
    out = np.empty(basis.size)
    for k in range(basis.size):
        phi = basis.mode(k)
        a_phi = apply_a(bench, phi)
        value = float(np.sum(get_grid(basis.domain).weights * a_phi.stack() * phi.stack()))
        out[k] = abs(value - basis.lambdas[k]) / basis.lambdas[k]
    return out


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def project_pn(basis: EigenBasis, n: int, state: StateField) -> SpectralCoeffs:
    """c_k = ⟨U, Φ_k⟩_H for k < n."""
    _check_order(basis, n)
    if state.domain != basis.domain:
        raise ContractViolation("state domain does not match the eigenbasis")
    flat = state.stack().reshape(3, -1)
    coeffs = np.empty(n)
    for comp in range(3):
        idx = np.flatnonzero(basis.components[:n] == comp)
        if idx.size:
            coeffs[idx] = basis._weighted[idx] @ flat[comp]
    return coeffs


def synthesize(basis: EigenBasis, coeffs: SpectralCoeffs) -> StateField:
    """Σ c_k Φ_k on the grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.size
    _check_order(basis, n)
    nx, nz = basis.domain.shape
    stack = np.zeros((3, nx * nz))
    flat = basis.modes.reshape(basis.size, -1)
    for comp in range(3):
        idx = np.flatnonzero(basis.components[:n] == comp)
        if idx.size:
            stack[comp] = coeffs[idx] @ flat[idx]
    stack = stack.reshape(3, nx, nz)
    # u modes are mean-free only up to the eigensolver residual
    stack[0] = velocity_fluctuation(stack[0], basis.domain)
    return StateField.from_stack(basis.domain, stack)


def project_band(basis: EigenBasis, n: int, m: int, state: StateField) -> SpectralCoeffs:
    """Coefficients of P_m^n U = (P_m - P_n) U, i.e. modes n..m-1."""
    if not 0 <= n <= m:
        raise ContractViolation(f"band ({n}, {m}] is empty or reversed")
    return project_pn(basis, m, state)[n:]


def tail(basis: EigenBasis, n: int, state: StateField) -> StateField:
    """Q_n U = U - P_n U."""
    return state - synthesize(basis, project_pn(basis, n, state))


def coefficient_norms(basis: EigenBasis, coeffs: SpectralCoeffs) -> tuple[float, float, float]:
    """(|U|², ‖U‖², |AU|²) of Σ c_k Φ_k, exact by orthonormality."""
    lam = basis.lambdas[: coeffs.size]
    sq = coeffs * coeffs
    return float(sq.sum()), float((lam * sq).sum()), float((lam * lam * sq).sum())


def poincare_qn_check(
    basis: EigenBasis,
    bench: OperatorBench,
    n: int,
    samples: list[StateField],
    slack: float = 1e-10,
) -> PoincareReport:
    """‖Q_n U‖² ≤ |AU|² / λ_{n+1} for every sample."""
    if n + 1 > basis.size:
        raise ContractViolation(f"need at least {n + 1} modes, basis has {basis.size}")
    lam_next = float(basis.lambdas[n])
    violations = 0
    worst = 0.0
    for state in samples:
        q = tail(basis, n, state)
        lhs = inner_v(q, q, bench.params)
        a_u = apply_a(bench, state)
        rhs = float(np.sum(get_grid(basis.domain).weights * a_u.stack() ** 2)) / lam_next
        if lhs > rhs * (1.0 + slack) + slack:
            violations += 1
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return PoincareReport(
        n=n, lambda_next=lam_next, samples=len(samples), violations=violations, max_ratio=worst
    )


def project_stack(basis: EigenBasis, n: int, stack: np.ndarray) -> np.ndarray:
    """Project a batch of states given as an (m, 3, nx, nz) array; returns (m, n)."""
    _check_order(basis, n)
    m = stack.shape[0]
    flat = stack.reshape(m, 3, -1)
    out = np.zeros((m, n))
    for comp in range(3):
        idx = np.flatnonzero(basis.components[:n] == comp)
        if idx.size and m:
            out[:, idx] = flat[:, comp] @ basis._weighted[idx].T
    return out
