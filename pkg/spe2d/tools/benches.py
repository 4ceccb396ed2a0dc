"""
Monte Carlo benches for nondecreasing processes.

``stoptime_exceedance_bench`` estimates P(σ_M < t) for σ_M = inf{r : X(r) ≥ M}
and checks the chain P(σ_M < t) ≤ κ/M + P(τ_n < t) on the same trials.
``stochastic_gronwall_bench`` checks the stopping-time hypothesis
sup_{[a,b]} X + ∫_a^b Y ≤ C₀ (X(a) + ∫_a^b (RX + Z)) on a grid of (a, b) and
fits the constant C of E(sup X + ∫Y) ≤ C E(X(0) + ∫Z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from spe2d.errors import ContractViolation
from spe2d.schemas.schemas import (
    ChainRow,
    GronwallReport,
    GronwallTrialRow,
    StoptimeReport,
    StoptimeRow,
)
from spe2d.utils.logging import log_bench_summary


@dataclass(frozen=True, eq=False)
class CadlagProcessSample:
    """One path of a nondecreasing process on a time grid (inf allowed)."""

    times: np.ndarray
    values: np.ndarray
    generator: str
    control: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ContractViolation("times and values differ in length")
        if np.any(np.isnan(self.values)):
            raise ContractViolation(f"{self.generator}: NaN in a sample path")
        finite = np.where(np.isinf(self.values), np.finfo(float).max, self.values)
        if np.any(np.diff(finite) < 0):
            raise ContractViolation(f"{self.generator}: sample path is not nondecreasing")

    @property
    def controls(self) -> np.ndarray:
        return self.values if self.control is None else self.control


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def bounded_generator(bound: float, horizon: float, steps: int, trials: int, seed: int):
    """X(t) = B (1 - e^{-rt}) with random rates; never reaches B."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, steps + 1)
    rates = rng.uniform(0.5, 5.0, size=trials)
    return [
        CadlagProcessSample(times, bound * -np.expm1(-r * times), "bounded") for r in rates
    ]


def brownian_max_generator(horizon: float, steps: int, trials: int, seed: int):
    """Running max of |B| with Brownian-bridge extremes sampled inside every step."""
    rng = np.random.default_rng(seed)
    dt = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    samples = []
    for _ in range(trials):
        path = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, math.sqrt(dt), size=steps))])
        a, b = path[:-1], path[1:]
        spread_hi = np.sqrt((b - a) ** 2 - 2.0 * dt * np.log(rng.uniform(size=steps)))
        spread_lo = np.sqrt((b - a) ** 2 - 2.0 * dt * np.log(rng.uniform(size=steps)))
        high = 0.5 * (a + b + spread_hi)
        low = 0.5 * (a + b - spread_lo)
        step_max = np.maximum(high, -low)
        running = np.maximum.accumulate(np.concatenate([[0.0], step_max]))
        samples.append(CadlagProcessSample(times, running, "brownian-max"))
    return samples


def reflection_probability(threshold: float, horizon: float = 1.0, terms: int = 50) -> float:
    """P(sup_{s≤t} |B_s| ≥ M) = 4 Σ_k (-1)^k (1 - Φ((2k+1) M / √t))."""
    scaled = threshold / math.sqrt(horizon)
    k = np.arange(terms)
    return float(4.0 * np.sum((-1.0) ** k * norm.sf((2 * k + 1) * scaled)))


def record_generator(records) -> list[CadlagProcessSample]:
    """X = sup‖U‖² + ∫|AU|² from simulated trajectories; control ∫|u|₍₂₎²."""
    out = []
    for rec in records:
        values = rec.sup_v + rec.int_a
        out.append(CadlagProcessSample(rec.times, values, "simulation", control=rec.int_u))
    return out


# ---------------------------------------------------------------------------
# Stopping-time exceedance
# ---------------------------------------------------------------------------

def _first_index(values: np.ndarray, level: float, limit: int) -> int:
    hits = np.flatnonzero(values[:limit] >= level)
    return int(hits[0]) if hits.size else limit - 1


def stoptime_exceedance_bench(
    samples: Sequence[CadlagProcessSample],
    thresholds: Sequence[float],
    horizon: float,
    budgets: Sequence[float] = (),
    oracle=None,
) -> StoptimeReport:
    """Estimate P(σ_M < t) per threshold, with the proof chain per (M, n)."""
    if not samples:
        raise ContractViolation("the bench needs at least one sample path")
    trials = len(samples)
    name = samples[0].generator
    # events are strict (σ_M < t); stopped values may sit at t itself
    limits = [int(np.searchsorted(s.times, horizon, side="left")) for s in samples]
    closed = [int(np.searchsorted(s.times, horizon, side="right")) for s in samples]

    hit = {}
    rows = []
    for m in sorted(thresholds):
        flags = np.array([np.any(s.values[:lim] >= m) for s, lim in zip(samples, limits)])
        p = float(flags.mean())
        hit[m] = flags
        rows.append(
            StoptimeRow(
                threshold=m,
                p_hat=p,
                stderr=math.sqrt(p * (1.0 - p) / trials),
                oracle=None if oracle is None else float(oracle(m)),
            )
        )
    monotone = all(
        b.p_hat <= a.p_hat + 2.0 * max(a.stderr, b.stderr, 1.0 / trials)
        for a, b in zip(rows, rows[1:])
    )

    chain = []
    for n in budgets:
        tau_flags = np.array(
            [np.any(s.controls[:lim] >= n) for s, lim in zip(samples, limits)]
        )
        p_tau = float(tau_flags.mean())
        kappa = 0.0
        for m in thresholds:
            stopped = []
            for s, lim in zip(samples, closed):
                index = min(_first_index(s.controls, n, lim), _first_index(s.values, m, lim))
                stopped.append(s.values[index])
            kappa = max(kappa, float(np.mean(stopped)))
        for row in rows:
            bound = kappa / row.threshold + p_tau
            chain.append(
                ChainRow(
                    threshold=row.threshold,
                    budget=n,
                    p_hat=row.p_hat,
                    kappa_hat=kappa,
                    p_tau=p_tau,
                    bound=bound,
                    holds=row.p_hat <= bound + 2.0 * row.stderr,
                )
            )

    log_bench_summary(
        f"stopping-time bench ({name})",
        [(f"P(sigma_{r.threshold:g} < {horizon:g})", f"{r.p_hat:.4f} ± {r.stderr:.4f}") for r in rows],
    )
    return StoptimeReport(
        generator=name, horizon=horizon, trials=trials, rows=rows, chain=chain, monotone=monotone
    )


# ---------------------------------------------------------------------------
# Stochastic Gronwall
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GronwallPath:
    """Nonnegative processes X, Y, Z, R sampled on a common grid."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z", "r"):
            values = getattr(self, name)
            if values.shape != self.times.shape:
                raise ContractViolation(f"{name} does not match the time grid")
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise ContractViolation(f"{name} must be finite and nonnegative")


def _cumulative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    return np.concatenate([[0.0], np.cumsum(0.5 * dt * (values[1:] + values[:-1]))])


def ode_generator(
    rate: float, horizon: float, steps: int, trials: int, seed: int, source: float = 0.0
) -> list[GronwallPath]:
    """x' = r x + z from random x(0): X = x, Y = 0, Z = z, R = r, so ∫R = r t."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, steps + 1)
    paths = []
    for x0 in rng.uniform(0.5, 1.5, size=trials):
        growth = np.exp(rate * times)
        x = x0 * growth + (source / rate * (growth - 1.0) if rate else source * times)
        zero = np.zeros_like(times)
        paths.append(GronwallPath(times, x, zero, np.full_like(times, source), np.full_like(times, rate)))
    return paths


def decay_generator(rate: float, horizon: float, steps: int, trials: int, seed: int) -> list[GronwallPath]:
    """Nonincreasing X with Y = Z = R = 0."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, steps + 1)
    zero = np.zeros_like(times)
    return [
        GronwallPath(times, x0 * np.exp(-rate * times), zero, zero, zero)
        for x0 in rng.uniform(0.5, 1.5, size=trials)
    ]


def strong_norm_generator(records, forcing_norm2: Sequence[float] | None = None, c: float = 1.0):
    """X = ‖U‖², Y = |AU|², R = c(1 + |u|₍₂₎²), Z = c(1 + |F|²) from simulated paths."""
    paths = []
    for rec in records:
        f2 = np.zeros_like(rec.times) if forcing_norm2 is None else np.asarray(forcing_norm2)[: rec.times.size]
        paths.append(
            GronwallPath(
                rec.times,
                rec.v_norm2,
                rec.a_norm2,
                c * (1.0 + f2),
                c * (1.0 + rec.u_h2_norm2),
            )
        )
    return paths


def _hypothesis_holds(path: GronwallPath, c0: float, grid_points: int) -> bool:
    cum_y = _cumulative(path.y, path.times)
    cum_rhs = _cumulative(path.r * path.x + path.z, path.times)
    marks = np.unique(np.linspace(0, path.times.size - 1, grid_points).round().astype(int))
    for i, a in enumerate(marks):
        for b in marks[i + 1 :]:
            lhs = float(path.x[a : b + 1].max()) + cum_y[b] - cum_y[a]
            rhs = c0 * (path.x[a] + cum_rhs[b] - cum_rhs[a])
            if lhs > rhs * (1.0 + 1e-9) + 1e-12:
                return False
    return True


def stochastic_gronwall_bench(
    paths: Sequence[GronwallPath],
    generator: str,
    k: float | None = None,
    c0: float = 1.0,
    grid_points: int = 8,
) -> GronwallReport:
    """Check the hypothesis per path, then fit C on the paths that satisfy it.

    Paths with ∫R > k are flagged with the hypothesis failures. ``k`` defaults
    to the largest ∫R observed; the reported ``k_bound`` is e^k.
    """
    if not paths:
        raise ContractViolation("the bench needs at least one path")
    r_integrals = [float(_cumulative(p.r, p.times)[-1]) for p in paths]
    k = max(r_integrals) if k is None else k

    rows = []
    lhs_kept = []
    rhs_kept = []
    for trial, (path, r_int) in enumerate(zip(paths, r_integrals)):
        ok = r_int <= k * (1.0 + 1e-12) and _hypothesis_holds(path, c0, grid_points)
        lhs = float(path.x.max()) + float(_cumulative(path.y, path.times)[-1])
        rhs = float(path.x[0]) + float(_cumulative(path.z, path.times)[-1])
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        rows.append(GronwallTrialRow(trial=trial, hypothesis_ok=ok, lhs=lhs, rhs=rhs, ratio=ratio))
        if ok:
            lhs_kept.append(lhs)
            rhs_kept.append(rhs)

    flagged = sum(not row.hypothesis_ok for row in rows)
    if rhs_kept and np.mean(rhs_kept) > 0:
        c_fitted = float(np.mean(lhs_kept) / np.mean(rhs_kept))
    else:
        c_fitted = math.nan
    log_bench_summary(
        f"gronwall bench ({generator})",
        [("trials", len(rows)), ("flagged", flagged), ("C fitted", f"{c_fitted:.4f}"), ("e^k", f"{math.exp(k):.4f}")],
    )
    return GronwallReport(
        generator=generator,
        trials=len(rows),
        flagged=flagged,
        c_fitted=c_fitted,
        k_bound=math.exp(k),
        rows=rows,
    )
