"""
Empirical probe of the bilinear-term inequalities.

Every estimate is evaluated as (lhs, rhs) without its constant on random
smooth fields; the report passes when the largest lhs/rhs ratio is finite and
moves by at most 25% under one grid refinement. Samples draw their
coefficients before touching the grid, so sample i is the same continuum
field on both resolutions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from spe2d.errors import ContractViolation
from spe2d.schemas.schemas import DomainSpec, PhysicalParams, ProbeReport, ProbeRow
from spe2d.services.domain_fields import (
    ScalarField,
    StateField,
    ddx,
    ddz,
    h1_norm,
    h2_norm,
    inner_h,
    l2_inner,
    l2_norm,
    laplacian_z,
    norm_h,
    norm_h2,
    norm_v,
    random_smooth_state,
)
from spe2d.services.operators import (
    OperatorBench,
    apply_b,
    apply_e,
    get_bench,
    horizontal_advection,
    vertical_advection,
)
from spe2d.utils.logging import log_probe_summary

STABILITY_BAND = 0.25
ZERO_RATIO = 1e-10

Fields = tuple[StateField, StateField, StateField]
Estimate = Callable[[OperatorBench, Fields], tuple[float, float]]


def _grad(phi: ScalarField) -> float:
    return math.sqrt(l2_norm(ddx(phi)) ** 2 + l2_norm(ddz(phi)) ** 2)


def _h1_state(state: StateField) -> float:
    return math.sqrt(sum(h1_norm(c) ** 2 for c in state.components()))


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

def _cancellation(bench, fields):
    u, u_sharp, _ = fields
    lhs = abs(inner_h(apply_b(bench, u, u_sharp), u_sharp))
    return lhs, norm_v(u, bench.params) * norm_v(u_sharp, bench.params) ** 2


def _trilinear_weak(bench, fields):
    u, u_sharp, u_flat = fields
    p = bench.params
    lhs = abs(inner_h(apply_b(bench, u, u_sharp), u_flat))
    rhs = norm_v(u, p) * norm_v(u_sharp, p) * math.sqrt(norm_h(u_flat) * norm_v(u_flat, p))
    return lhs, rhs


def _trilinear_strong(bench, fields):
    u, u_sharp, u_flat = fields
    p = bench.params
    lhs = abs(inner_h(apply_b(bench, u, u_sharp), u_flat))
    rhs = norm_v(u, p) * math.sqrt(norm_v(u_sharp, p) * norm_h2(u_sharp)) * norm_h(u_flat)
    return lhs, rhs


def _quadratic_l2(bench, fields):
    u = fields[0]
    lhs = norm_h(apply_b(bench, u, u)) ** 2
    return lhs, norm_v(u, bench.params) ** 3 * norm_h2(u)


def _first_component_control(bench, fields):
    u, u_sharp, u_flat = fields
    lhs = abs(inner_h(apply_b(bench, u, u_sharp), u_flat))
    rhs = math.sqrt(_grad(u.u) * h2_norm(u.u)) * norm_v(u_sharp, bench.params) * norm_h(u_flat)
    return lhs, rhs


def _quadratic_h1(bench, fields):
    u = fields[0]
    lhs = _h1_state(apply_b(bench, u, u)) ** 2
    return lhs, norm_v(u, bench.params) * norm_h2(u) ** 3


def _horizontal_classic_a(bench, fields):
    u, u_sharp, u_flat = (f.u for f in fields)
    lhs = abs(l2_inner(horizontal_advection(u, u_sharp), u_flat))
    rhs = math.sqrt(l2_norm(u) * h2_norm(u)) * l2_norm(ddx(u_sharp)) * l2_norm(u_flat)
    return lhs, rhs


def _horizontal_classic_b(bench, fields):
    u, u_sharp, u_flat = (f.u for f in fields)
    dx_sharp = ddx(u_sharp)
    lhs = abs(l2_inner(horizontal_advection(u, u_sharp), u_flat))
    rhs = (
        math.sqrt(l2_norm(u) * _grad(u))
        * math.sqrt(l2_norm(dx_sharp) * _grad(dx_sharp))
        * l2_norm(u_flat)
    )
    return lhs, rhs


def _vertical_anisotropic_a(bench, fields):
    u, u_sharp, u_flat = (f.u for f in fields)
    dz_sharp = ddz(u_sharp)
    lhs = abs(l2_inner(vertical_advection(u, u_sharp), u_flat))
    rhs = l2_norm(ddx(u)) * math.sqrt(l2_norm(dz_sharp) * _grad(dz_sharp)) * l2_norm(u_flat)
    return lhs, rhs


def _vertical_anisotropic_b(bench, fields):
    u, u_sharp, u_flat = (f.u for f in fields)
    lhs = abs(l2_inner(vertical_advection(u, u_sharp), u_flat))
    rhs = math.sqrt(_grad(u) * h2_norm(u)) * l2_norm(ddz(u_sharp)) * l2_norm(u_flat)
    return lhs, rhs


def _vertical_cancellation(bench, fields):
    u = fields[0].u
    advected = horizontal_advection(u, u) + vertical_advection(u, u)
    lhs = abs(l2_inner(advected, -laplacian_z(u)))
    dz = ddz(u)
    l2, grad = l2_norm(u), _grad(u)
    rhs = l2 * grad**2 + math.sqrt(l2_norm(dz) * _grad(dz)) * math.sqrt(l2) * grad**1.5
    return lhs, rhs


def _coriolis_bound(bench, fields):
    u = fields[0]
    return norm_h(apply_e(bench, u)), abs(bench.params.f) * norm_h(u)


ESTIMATES: dict[str, Estimate] = {
    "cancellation": _cancellation,
    "trilinear_weak": _trilinear_weak,
    "trilinear_strong": _trilinear_strong,
    "quadratic_l2": _quadratic_l2,
    "first_component_control": _first_component_control,
    "quadratic_h1": _quadratic_h1,
    "horizontal_classic_a": _horizontal_classic_a,
    "horizontal_classic_b": _horizontal_classic_b,
    "vertical_anisotropic_a": _vertical_anisotropic_a,
    "vertical_anisotropic_b": _vertical_anisotropic_b,
    "vertical_cancellation": _vertical_cancellation,
    "coriolis_bound": _coriolis_bound,
}


def evaluate_estimate(estimate: str, bench: OperatorBench, fields: Fields) -> tuple[float, float]:
    """(lhs, rhs) of one inequality on one field triple (U, U♯, U♭)."""
    try:
        fn = ESTIMATES[estimate]
    except KeyError:
        raise ContractViolation(f"unknown estimate {estimate!r}; known: {', '.join(ESTIMATES)}")
    return fn(bench, fields)


def sample_fields(domain: DomainSpec, seed: int, index: int, order: int = 3) -> Fields:
    """Sample ``index``: U and U♯ constrained, U♭ only mean-free in u."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    return (
        random_smooth_state(domain, rng, order=order),
        random_smooth_state(domain, rng, order=order),
        random_smooth_state(domain, rng, order=order, space="H"),
    )


# ---------------------------------------------------------------------------
# Probe
# ---------------------------------------------------------------------------

def _probe_grid(
    estimate: str, domain: DomainSpec, params: PhysicalParams, samples: int, seed: int, threads: int
) -> tuple[list[ProbeRow], int]:
    bench = get_bench(domain, params)

    def one(index: int) -> tuple[float, float]:
        return evaluate_estimate(estimate, bench, sample_fields(domain, seed, index))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        pairs = list(pool.map(one, range(samples)))

    rows = []
    skipped = 0
    for index, (lhs, rhs) in enumerate(pairs):
        if rhs == 0.0:
            skipped += 1
            continue
        rows.append(ProbeRow(estimate=estimate, sample=index, lhs=lhs, rhs=rhs, ratio=lhs / rhs))
    return rows, skipped


def ratios_stable(coarse: float, fine: float) -> bool:
    if not (math.isfinite(coarse) and math.isfinite(fine)):
        return False
    top = max(coarse, fine)
    if top <= ZERO_RATIO:
        return True
    return abs(fine - coarse) <= STABILITY_BAND * top


def run_estimate_probe(
    estimate: str,
    samples: int,
    seed: int,
    domain: DomainSpec,
    params: PhysicalParams,
    refine: bool = True,
    threads: int = 1,
) -> ProbeReport:
    """Ratio table on ``domain`` and, with ``refine``, the verdict against the doubled grid."""
    if estimate not in ESTIMATES:
        raise ContractViolation(f"unknown estimate {estimate!r}; known: {', '.join(ESTIMATES)}")
    if samples < 10:
        raise ContractViolation(f"the probe needs at least 10 samples, got {samples}")
    rows, skipped = _probe_grid(estimate, domain, params, samples, seed, threads)
    max_ratio = max((r.ratio for r in rows), default=0.0)
    report = ProbeReport(
        estimate=estimate, nx=domain.nx, nz=domain.nz, rows=rows, skipped=skipped, max_ratio=max_ratio
    )
    if refine:
        fine = domain.model_copy(update={"nx": 2 * domain.nx - 1, "nz": 2 * domain.nz - 1})
        fine_rows, _ = _probe_grid(estimate, fine, params, samples, seed, threads)
        fine_max = max((r.ratio for r in fine_rows), default=0.0)
        report.refined_max_ratio = fine_max
        report.passed = ratios_stable(max_ratio, fine_max)
    log_probe_summary(estimate, report.used, skipped, max_ratio, report.passed)
    return report
