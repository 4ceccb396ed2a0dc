"""
Tests for the truncated Wiener forcing and its counter-based increments.
"""

import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.errors import ContractViolation
from spe2d.schemas.schemas import DomainSpec, NoiseSpec, PhysicalParams
from spe2d.services.domain_fields import (
    StateField,
    column_integral,
    get_grid,
    random_smooth_state,
)
from spe2d.services.noise import (
    NoiseCondition,
    RngStream,
    additive_martingale_moments,
    build_noise_model,
    hs_norm,
    lipschitz_bound,
    lipschitz_probe,
    noise_condition,
    sample_increment_block,
    sample_increments,
    sigma_stack,
    wavenumber_pairs,
)


DOMAIN = DomainSpec(nx=12, nz=12)


def _pairs(count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        (random_smooth_state(DOMAIN, rng), random_smooth_state(DOMAIN, rng)) for _ in range(count)
    ]


class TestIncrements:
    """Counter-based ΔW draws."""

    def test_block_matches_single_steps(self):
        stream = RngStream(seed=7, trajectory=3)
        block = sample_increment_block(stream, 5, 1e-2, 0, 12)
        for step in range(12):
            single = sample_increments(stream, 5, 1e-2, step)
            assert np.array_equal(block[step], single), f"step {step} differs"

    def test_block_offset_matches_full_table(self):
        stream = RngStream(seed=11)
        full = sample_increment_block(stream, 6, 1e-3, 0, 40)
        tail = sample_increment_block(stream, 6, 1e-3, 25, 40)
        assert np.array_equal(full[25:], tail)

    def test_trajectories_are_independent_streams(self):
        a = sample_increment_block(RngStream(1, 0), 4, 1e-2, 0, 10)
        b = sample_increment_block(RngStream(1, 1), 4, 1e-2, 0, 10)
        assert not np.array_equal(a, b)

    def test_moments(self):
        dt = 1e-2
        draws = sample_increment_block(RngStream(3), 4, dt, 0, 20000)
        assert abs(draws.mean()) < 4 * np.sqrt(dt / draws.size)
        assert abs(draws.var() / dt - 1.0) < 0.03

    def test_invalid_inputs(self):
        with pytest.raises(ContractViolation):
            RngStream(seed=-1)
        with pytest.raises(ContractViolation):
            sample_increments(RngStream(0), 3, 0.0)


class TestModel:
    """Coefficient families σ_k(U)."""

    def test_wavenumbers_enumerate_by_total(self):
        assert wavenumber_pairs(4) == [(1, 1), (1, 2), (2, 1), (1, 3)]

    def test_additive_fields_are_state_independent(self):
        model = build_noise_model(NoiseSpec(kind="additive", modes=6), DOMAIN)
        state = random_smooth_state(DOMAIN, np.random.default_rng(0))
        assert np.array_equal(sigma_stack(model, state), sigma_stack(model, StateField.zeros(DOMAIN)))

    def test_u_component_stays_mean_free(self):
        for kind in ("additive", "diagonal-multiplicative", "affine", "nonlinear"):
            model = build_noise_model(NoiseSpec(kind=kind, modes=6), DOMAIN)
            state = random_smooth_state(DOMAIN, np.random.default_rng(1))
            for field in sigma_stack(model, state):
                u = StateField.from_stack(DOMAIN, field).u
                assert np.abs(column_integral(u)).max() < 1e-12, kind

    def test_amplitudes_decay(self):
        model = build_noise_model(NoiseSpec(kind="affine", modes=5, gamma=2.0), DOMAIN)
        assert np.all(np.diff(model.amplitudes) < 0)
        assert np.all(np.diff(model.gains) < 0)

    def test_explicit_gains_length_checked(self):
        with pytest.raises(ValueError):
            NoiseSpec(kind="diagonal-multiplicative", modes=3, gains=(0.1, 0.2))

    def test_hs_norm_of_additive_model(self):
        model = build_noise_model(NoiseSpec(kind="additive", modes=4), DOMAIN)
        w = get_grid(DOMAIN).weights
        expected = np.sqrt(np.sum(w[None, None] * model.fields**2))
        assert abs(hs_norm(model, StateField.zeros(DOMAIN)) - expected) < 1e-14

    def test_v_norm_needs_parameters(self):
        model = build_noise_model(NoiseSpec(modes=2), DOMAIN)
        with pytest.raises(ContractViolation):
            hs_norm(model, StateField.zeros(DOMAIN), space="V")
        assert hs_norm(model, StateField.zeros(DOMAIN), "V", PhysicalParams()) > 0


class TestStructure:
    """Lipschitz probes and the boundary-row condition."""

    def test_multiplicative_bound_is_attained(self):
        model = build_noise_model(NoiseSpec(kind="diagonal-multiplicative", modes=6), DOMAIN)
        report = lipschitz_probe(model, _pairs(10))
        bound = lipschitz_bound(model)
        assert report.passed, f"{report.max_ratio} vs {bound}"
        assert abs(report.max_ratio - bound) <= 1e-8 * bound

    def test_nonlinear_kind_is_lipschitz(self):
        model = build_noise_model(NoiseSpec(kind="nonlinear", modes=6), DOMAIN)
        assert lipschitz_probe(model, _pairs(10, seed=1)).passed

    def test_additive_kind_has_zero_lipschitz_constant(self):
        model = build_noise_model(NoiseSpec(kind="additive", modes=6), DOMAIN)
        report = lipschitz_probe(model, _pairs(5, seed=2))
        assert report.max_ratio == 0.0 and report.passed

    def test_v_space_probe_reports_no_bound(self):
        model = build_noise_model(NoiseSpec(kind="affine", modes=4), DOMAIN)
        report = lipschitz_probe(model, _pairs(4, seed=3), space="V", params=PhysicalParams())
        assert report.bound is None
        assert np.isfinite(report.max_ratio)

    def test_additive_fields_meet_the_strong_condition(self):
        model = build_noise_model(NoiseSpec(kind="additive", modes=9), DOMAIN)
        assert noise_condition(model) is NoiseCondition.STRONG

    def test_uniform_envelope_is_weak(self):
        spec = NoiseSpec(kind="diagonal-multiplicative", modes=3, envelope="uniform")
        model = build_noise_model(spec, DOMAIN)
        assert noise_condition(model) is NoiseCondition.WEAK


class TestMartingale:
    """Itô isometry of the additive martingale."""

    def test_second_moment(self):
        model = build_noise_model(NoiseSpec(kind="additive", modes=4, amplitude=1.0), DOMAIN)
        dt, steps, paths = 1e-2, 50, 4000
        final, sup = additive_martingale_moments(model, dt, steps, paths, seed=5)
        w = get_grid(DOMAIN).weights
        expected = dt * steps * float(np.sum(w[None, None] * model.fields**2))
        stderr = final.std(ddof=1) / np.sqrt(paths)
        assert abs(final.mean() - expected) <= 4 * stderr, f"{final.mean()} vs {expected} ± {stderr}"
        assert np.all(sup**2 >= final - 1e-12)

    def test_multiplicative_rejected(self):
        model = build_noise_model(NoiseSpec(kind="affine", modes=2), DOMAIN)
        with pytest.raises(ContractViolation):
            additive_martingale_moments(model, 1e-2, 10, 2, seed=0)
