"""
Truncated Wiener forcing σ(U) dW and its random increments.

Coefficient families (mode k = 1..K, wavenumber pairs enumerated by p + q):

    additive                 σ_k(U) = a_k G_k
    diagonal-multiplicative  σ_k(U) = b_k Π(g_k ⊙ U)
    affine                   σ_k(U) = a_k G_k + b_k Π(g_k ⊙ U)
    nonlinear                σ_k(U) = b_k Π(g_k ⊙ sin U)

with a_k = amplitude·k^-γ, b_k = gain·k^-γ and Π removing the column mean of
the u-component. G_k is a single-component smooth field that vanishes with
zero normal derivative at the surface; g_k is a scalar envelope.

Increments are counter-based: the Philox counter for step j of trajectory r
on lane ℓ is ``[j*B, ℓ, 0, r]`` with B blocks per step, so a draw is a pure
function of (seed, r, ℓ, j) whatever the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri

from spe2d.errors import ContractViolation
from spe2d.schemas.schemas import DomainSpec, LipschitzReport, NoiseSpec, PhysicalParams
from spe2d.services.domain_fields import StateField, get_grid, inner_v, random_smooth_state

SEED_TAG = 0x53504532  # "SPE2"
NOISE_LANE = 0
INITIAL_LANE = 1


class NoiseCondition(str, Enum):
    STRONG = "strong"  # coefficient fields honor the D(A) boundary rows
    WEAK = "weak"


# ---------------------------------------------------------------------------
# Counter-based increments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    seed: int
    trajectory: int = 0
    lane: int = NOISE_LANE

    def __post_init__(self):
        for name in ("seed", "trajectory", "lane"):
            value = getattr(self, name)
            if not 0 <= value < 2**64:
                raise ContractViolation(f"{name}={value} is not an unsigned 64-bit integer")

    def _bit_generator(self, block: int) -> np.random.Philox:
        key = np.array([self.seed, SEED_TAG], dtype=np.uint64)
        counter = np.array([block, self.lane, 0, self.trajectory], dtype=np.uint64)
        return np.random.Philox(counter=counter, key=key)

    def normals(self, start: int, stop: int, width: int) -> np.ndarray:
        """Standard normals for rows ``start..stop-1``, ``width`` per row."""
        if stop <= start or width == 0:
            return np.zeros((max(stop - start, 0), width))
        blocks = -(-width // 4)
        raw = self._bit_generator(start * blocks).random_raw((stop - start) * blocks * 4)
        raw = raw.reshape(stop - start, blocks * 4)[:, :width]
        uniform = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(uniform)


def sample_increments(stream: RngStream, modes: int, dt: float, step: int = 0) -> np.ndarray:
    """ΔW^1..ΔW^K for one step, each N(0, dt)."""
    if dt <= 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * stream.normals(step, step + 1, modes)[0]


def sample_increment_block(
    stream: RngStream, modes: int, dt: float, start: int, stop: int
) -> np.ndarray:
    """Rows ``start..stop-1`` of the increment table; identical to per-step draws."""
    if dt <= 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * stream.normals(start, stop, modes)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseModel:
    domain: DomainSpec
    kind: str
    modes: int
    gamma: float
    amplitudes: np.ndarray
    gains: np.ndarray
    fields: np.ndarray  # (K, 3, nx, nz), already scaled by a_k
    envelopes: np.ndarray  # (K, nx, nz)

    @property
    def is_additive(self) -> bool:
        return self.kind == "additive"


def wavenumber_pairs(count: int) -> list[tuple[int, int]]:
    """(p, q) pairs ordered by p + q, then p."""
    pairs: list[tuple[int, int]] = []
    total = 2
    while len(pairs) < count:
        for p in range(1, total):
            pairs.append((p, total - p))
        total += 1
    return pairs[:count]


def _column_mean_free(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    wz = get_grid(domain).wz
    return values - (values @ wz)[..., None] / domain.depth


def _profiles(domain: DomainSpec, p: int, q: int) -> dict[str, np.ndarray]:
    x, z = get_grid(domain).meshgrid()
    zeta = (z + domain.depth) / domain.depth
    sx2 = np.sin(p * np.pi * x / domain.length) ** 2
    sz2 = np.sin(q * np.pi * zeta) ** 2
    return {
        "u": sx2 * (sz2 - np.sin(2 * q * np.pi * zeta) ** 2),
        "v": sx2 * sz2,
        "temp": np.cos(p * np.pi * x / domain.length) * sz2,
        "envelope": sx2 * sz2,
    }


def _normalized(values: np.ndarray) -> np.ndarray:
    peak = float(np.abs(values).max())
    return values / peak if peak > 0 else values


def build_noise_model(spec: NoiseSpec, domain: DomainSpec) -> NoiseModel:
    K = spec.modes
    k = np.arange(1, K + 1, dtype=float)
    decay = k ** (-spec.gamma)
    amplitudes = spec.amplitude * decay
    gains = np.array(spec.gains, dtype=float) if spec.gains is not None else spec.gain * decay
    if spec.kind == "additive":
        gains = np.zeros(K)
    if spec.kind in ("diagonal-multiplicative", "nonlinear"):
        amplitudes = np.zeros(K)

    nx, nz = domain.shape
    fields = np.zeros((K, 3, nx, nz))
    envelopes = np.ones((K, nx, nz))
    for idx, (p, q) in enumerate(wavenumber_pairs(-(-K // 3))):
        prof = _profiles(domain, p, q)
        for comp, name in enumerate(("u", "v", "temp")):
            mode = 3 * idx + comp
            if mode >= K:
                break
            fields[mode, comp] = amplitudes[mode] * _normalized(prof[name])
            if spec.envelope == "sin2":
                envelopes[mode] = _normalized(prof["envelope"])
    fields[:, 0] = _column_mean_free(fields[:, 0], domain)
    return NoiseModel(domain, spec.kind, K, spec.gamma, amplitudes, gains, fields, envelopes)


def modal_noise(basis, q: np.ndarray) -> NoiseModel:
    """Additive model with σ_k = q_k Φ_k (diagonal in the eigenbasis)."""
    q = np.asarray(q, dtype=float)
    K = q.size
    if K > basis.size:
        raise ContractViolation(f"{K} noise modes but only {basis.size} basis modes")
    nx, nz = basis.domain.shape
    fields = np.zeros((K, 3, nx, nz))
    for k in range(K):
        fields[k, basis.components[k]] = q[k] * basis.modes[k]
    return NoiseModel(
        basis.domain, "additive", K, float("inf"), q.copy(), np.zeros(K), fields, np.ones((K, nx, nz))
    )


def sigma_stack(model: NoiseModel, state: StateField) -> np.ndarray:
    """(K, 3, nx, nz) array of σ_k(U)."""
    if state.domain != model.domain:
        raise ContractViolation("state domain does not match the noise model")
    if model.modes == 0:
        return np.zeros((0, 3) + model.domain.shape)
    out = model.fields.copy()
    if model.kind != "additive":
        source = state.stack()
        if model.kind == "nonlinear":
            source = np.sin(source)
        part = model.gains[:, None, None, None] * model.envelopes[:, None] * source[None]
        part[:, 0] = _column_mean_free(part[:, 0], model.domain)
        out += part
    return out


def apply_sigma(model: NoiseModel, state: StateField) -> list[StateField]:
    return [StateField.from_stack(model.domain, s) for s in sigma_stack(model, state)]


def hs_norm(
    model: NoiseModel, state: StateField, space: str = "H", params: PhysicalParams | None = None
) -> float:
    """sqrt(Σ_k ‖σ_k(U)‖²) in H or V."""
    stack = sigma_stack(model, state)
    if space == "H":
        w = get_grid(model.domain).weights
        return float(np.sqrt(np.sum(w[None, None] * stack**2)))
    if space == "V":
        if params is None:
            raise ContractViolation("the V norm needs physical parameters")
        total = 0.0
        for s in stack:
            field = StateField.from_stack(model.domain, s)
            total += inner_v(field, field, params)
        return float(np.sqrt(max(total, 0.0)))
    raise ContractViolation(f"unknown space {space!r}")


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------

def lipschitz_bound(model: NoiseModel) -> float:
    """Sharp H-Lipschitz constant sqrt(max_node Σ_k b_k² g_k²) of the state-dependent part."""
    if model.modes == 0 or model.kind == "additive":
        return 0.0
    weighted = np.sum((model.gains[:, None, None] * model.envelopes) ** 2, axis=0)
    return float(np.sqrt(weighted.max()))


def aligned_pair(model: NoiseModel) -> tuple[StateField, StateField]:
    """Pair whose difference is a v-delta at the node attaining ``lipschitz_bound``."""
    weighted = np.sum((model.gains[:, None, None] * model.envelopes) ** 2, axis=0)
    i, j = np.unravel_index(int(np.argmax(weighted)), weighted.shape)
    stack = np.zeros((3,) + model.domain.shape)
    stack[1, i, j] = 1e-3
    return StateField.zeros(model.domain), StateField.from_stack(model.domain, stack)


def lipschitz_probe(
    model: NoiseModel,
    pairs: list[tuple[StateField, StateField]],
    space: str = "H",
    params: PhysicalParams | None = None,
    include_aligned: bool = True,
) -> LipschitzReport:
    """Empirical ‖σ(U) - σ(V)‖_HS / ‖U - V‖ over the given pairs."""
    w = get_grid(model.domain).weights
    if include_aligned and space == "H" and model.modes and not model.is_additive:
        pairs = list(pairs) + [aligned_pair(model)]
    ratios = []
    skipped = 0
    for a, b in pairs:
        diff_state = a - b
        diff_sigma = sigma_stack(model, a) - sigma_stack(model, b)
        if space == "H":
            denom = float(np.sqrt(np.sum(w * diff_state.stack() ** 2)))
            numer = float(np.sqrt(np.sum(w[None, None] * diff_sigma**2)))
        else:
            if params is None:
                raise ContractViolation("the V norm needs physical parameters")
            denom = float(np.sqrt(max(inner_v(diff_state, diff_state, params), 0.0)))
            numer = float(
                np.sqrt(
                    sum(
                        max(inner_v(f, f, params), 0.0)
                        for f in (StateField.from_stack(model.domain, s) for s in diff_sigma)
                    )
                )
            )
        if denom == 0.0:
            skipped += 1
            continue
        ratios.append(numer / denom)
    max_ratio = max(ratios, default=0.0)
    bound = lipschitz_bound(model) if space == "H" else None
    passed = bool(np.isfinite(max_ratio)) and (
        bound is None or max_ratio <= bound * (1.0 + 1e-8) + 1e-14
    )
    return LipschitzReport(
        kind=model.kind,
        space=space,
        samples=len(ratios),
        skipped=skipped,
        max_ratio=max_ratio,
        bound=bound,
        passed=passed,
    )


def noise_condition(model: NoiseModel, seed: int = 0) -> NoiseCondition:
    """STRONG when every σ_k(U) is zero on Γ_l ∪ Γ_b (velocity) and on Γ_i (all
    components), so both Dirichlet and Robin rows hold; otherwise WEAK."""
    grid = get_grid(model.domain)
    probes = [
        StateField.zeros(model.domain),
        random_smooth_state(model.domain, np.random.default_rng(seed), order=3),
    ]
    for state in probes:
        stack = sigma_stack(model, state)
        scale = max(float(np.abs(stack).max(initial=0.0)), 1e-300)
        velocity_rows = np.abs(stack[:, :2][..., grid.dirichlet]).max(initial=0.0)
        surface_rows = np.abs(stack[..., -1]).max(initial=0.0)
        if max(velocity_rows, surface_rows) > 1e-12 * scale:
            return NoiseCondition.WEAK
    return NoiseCondition.STRONG


# ---------------------------------------------------------------------------
# Martingale moments (additive noise)
# ---------------------------------------------------------------------------

def additive_martingale_moments(
    model: NoiseModel, dt: float, steps: int, trajectories: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory |M_T|²_H and sup_t |M_t|_H of M_t = Σ_j Σ_k σ_k ΔW_j^k.

    Uses the Gram matrix of the fixed fields, so no grid work per step.
    """
    if not model.is_additive:
        raise ContractViolation("martingale moments are defined for additive noise only")
    w = get_grid(model.domain).weights
    flat = model.fields.reshape(model.modes, 3, -1) * np.sqrt(w.ravel())[None, None]
    flat = flat.reshape(model.modes, -1)
    gram = flat @ flat.T
    final = np.empty(trajectories)
    sup = np.empty(trajectories)
    for r in range(trajectories):
        dw = sample_increment_block(RngStream(seed, r), model.modes, dt, 0, steps)
        path = np.cumsum(dw, axis=0)
        norms2 = np.einsum("tk,kl,tl->t", path, gram, path)
        final[r] = norms2[-1]
        sup[r] = float(np.sqrt(max(norms2.max(), 0.0)))
    return final, sup
