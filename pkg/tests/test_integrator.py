"""
Tests for Galerkin time stepping, trajectories and their monitors.
"""

import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.errors import ConfigError, ContractViolation, NumericalBlowup, SnapshotError
from spe2d.services.integrator import (
    RunStatus,
    cauchy_diagnostic,
    concatenate_records,
    drift_coefficients,
    forcing_norm2,
    initial_coefficients,
    ito_energy_residual,
    linear_modal_ensemble,
    manufactured_forcing,
    prepare_run,
    run_trajectory,
    step_galerkin,
    stopping_step,
    strong_budget_step,
)
from spe2d.services.noise import modal_noise
from spe2d.services.settings import config_from_dict
from spe2d.services.spectral import synthesize


def small_config(**sections):
    """Desk-scale config: 10x10 grid, 12 modes, 20 steps."""
    data = {
        "domain": {"nx": 10, "nz": 10},
        "noise": {"modes": 4},
        "numerics": {"n_galerkin": 12, "dt": 1e-3, "t_end": 0.02},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return config_from_dict(data)


QUIET = {"buoyancy": False, "advection": False, "coriolis": False}


class TestStep:
    """One semi-implicit Euler–Maruyama step."""

    def test_linear_step_is_implicit_damping(self):
        cfg = small_config(noise={"modes": 0}, numerics=QUIET)
        ctx = prepare_run(cfg)
        c = initial_coefficients(ctx)
        result = step_galerkin(ctx, c, 0.0, np.zeros(0))
        assert np.allclose(result.coeffs, c / (1.0 + ctx.dt * ctx.basis.lambdas), rtol=1e-12, atol=1e-15)

    def test_additive_increment_enters_through_projection(self):
        cfg = small_config(numerics=QUIET, initial={"kind": "zero"})
        ctx = prepare_run(cfg)
        dw = np.array([0.1, -0.2, 0.05, 0.3])
        result = step_galerkin(ctx, np.zeros(ctx.n), 0.0, dw)
        expected = (ctx.additive_projection().T @ dw) / (1.0 + ctx.dt * ctx.basis.lambdas)
        assert np.allclose(result.coeffs, expected, atol=1e-15)

    def test_wrong_order_rejected(self):
        ctx = prepare_run(small_config())
        with pytest.raises(ContractViolation):
            step_galerkin(ctx, np.zeros(ctx.n + 1), 0.0, np.zeros(4))

    def test_step_past_horizon_rejected(self):
        ctx = prepare_run(small_config())
        with pytest.raises(ContractViolation):
            step_galerkin(ctx, np.zeros(ctx.n), 0.02, np.zeros(4))

    def test_order_above_degrees_of_freedom(self):
        with pytest.raises(ConfigError) as info:
            prepare_run(small_config(domain={"nx": 6, "nz": 6}, numerics={"n_galerkin": 1000}))
        assert info.value.key_path == "numerics.n_galerkin"


class TestTrajectory:
    """Whole paths: determinism, dissipation, monitors, restart."""

    def test_rerun_is_bit_identical(self):
        ctx = prepare_run(small_config())
        a = run_trajectory(ctx, trajectory=2)
        b = run_trajectory(ctx, trajectory=2)
        assert np.array_equal(a.snapshots, b.snapshots)
        assert np.array_equal(a.h_norm2, b.h_norm2)

    def test_record_layout(self):
        ctx = prepare_run(small_config())
        record = run_trajectory(ctx)
        assert record.status is RunStatus.COMPLETED
        assert record.times.size == ctx.n_steps + 1
        assert record.increments.shape == (ctx.n_steps, 4)
        assert record.has_every_step()

    def test_cadence_thins_snapshots(self):
        ctx = prepare_run(small_config(output={"cadence": 5}))
        record = run_trajectory(ctx)
        assert list(record.snapshot_steps) == [0, 5, 10, 15, 20]
        with pytest.raises(SnapshotError):
            record.snapshot(3)

    def test_dissipativity(self):
        for seed in range(5):
            cfg = small_config(
                noise={"modes": 0},
                physics={"beta_t": 0.0},
                numerics={"seed": seed, "t_end": 0.2},
            )
            record = run_trajectory(prepare_run(cfg))
            growth = np.diff(record.h_norm2)
            assert np.all(growth <= 1e-13 * record.h_norm2[0]), f"seed {seed}: max growth {growth.max()}"

    @pytest.mark.slow
    def test_dissipativity_over_long_runs(self):
        for seed in range(20):
            cfg = small_config(
                noise={"modes": 0},
                physics={"beta_t": 0.0},
                numerics={"seed": seed, "t_end": 1.0},
            )
            record = run_trajectory(prepare_run(cfg))
            assert record.h_norm2.size == 1001
            growth = np.diff(record.h_norm2)
            assert np.all(growth <= 1e-13 * record.h_norm2[0]), f"seed {seed}: max growth {growth.max()}"

    def test_monitor_stops_the_path(self):
        cfg = small_config(numerics={"blowup_m": 1e-9})
        record = run_trajectory(prepare_run(cfg))
        assert record.status is RunStatus.STOPPED
        assert record.tau_m_step == 0
        assert record.times.size == 1

    def test_post_hoc_monitors_agree(self):
        cfg = small_config(numerics={"blowup_m": 1e-5, "tau_n_budget": 1e-4, "stop_on_monitor": False})
        record = run_trajectory(prepare_run(cfg))
        assert record.status is RunStatus.COMPLETED
        assert record.tau_m_step == stopping_step(record, 1e-5)
        assert record.tau_n_step == strong_budget_step(record, 1e-4)

    def test_blowup_detected(self):
        cfg = small_config(
            forcing={"kind": "fixed", "amplitude": 100.0},
            initial={"kind": "zero"},
            numerics={"dt": 1e-2, "t_end": 0.2, "blowup_factor": 1.5, "blowup_m": 1e12},
        )
        ctx = prepare_run(cfg)
        record = run_trajectory(ctx)
        assert record.status is RunStatus.BLOWUP
        assert record.blowup_step is not None
        with pytest.raises(NumericalBlowup):
            run_trajectory(ctx, strict=True)

    def test_checkpoint_restart_is_bit_exact(self):
        full_ctx = prepare_run(small_config())
        full = run_trajectory(full_ctx, trajectory=1)
        half_ctx = prepare_run(small_config(numerics={"t_end": 0.01}))
        first = run_trajectory(half_ctx, trajectory=1)
        second = run_trajectory(full_ctx, trajectory=1, checkpoint=first.checkpoint())
        joined = concatenate_records(first, second)
        for name in ("snapshots", "h_norm2", "sup_v", "int_a", "int_u", "increments"):
            assert np.array_equal(getattr(joined, name), getattr(full, name)), name

    def test_checkpoint_for_another_path_rejected(self):
        ctx = prepare_run(small_config())
        record = run_trajectory(ctx, trajectory=0)
        with pytest.raises(ContractViolation):
            run_trajectory(ctx, trajectory=1, checkpoint=record.checkpoint(10))


class TestDiagnostics:
    """Cauchy differences, Itô residual, manufactured and modal solutions."""

    def test_cauchy_shares_one_noise_path(self):
        report, records = cauchy_diagnostic(small_config(), [4, 8, 12])
        assert [(row.n, row.m) for row in report.rows] == [(4, 8), (8, 12)]
        assert np.array_equal(records[0].increments, records[2].increments)
        assert all(row.sup_v_norm2 >= 0 and row.int_a_norm2 >= 0 for row in report.rows)

    def test_cauchy_orders_must_increase(self):
        with pytest.raises(ContractViolation):
            cauchy_diagnostic(small_config(), [8, 4])

    @pytest.mark.slow
    def test_cauchy_differences_shrink_with_order(self):
        orders = [8, 16, 32, 64]
        k = np.arange(1, 65, dtype=float)
        sups = []
        decreasing = 0
        for seed in range(20):
            rng = np.random.default_rng([seed, 3])
            signs = rng.choice([-1.0, 1.0], size=k.size)
            shape = 1e-3 * signs * rng.uniform(0.8, 1.0, size=k.size) * k**-2
            cfg = small_config(
                domain={"nx": 16, "nz": 16},
                noise={"amplitude": 1e-6},
                initial={"kind": "modes", "coefficients": shape.tolist()},
                numerics={"buoyancy": False, "coriolis": False},
            )
            report, _ = cauchy_diagnostic(cfg, orders, seed=seed)
            row_sups = [row.sup_v_norm2 for row in report.rows]
            sups.append(row_sups)
            decreasing += all(b < a for a, b in zip(row_sups, row_sups[1:]))
        medians = np.median(np.array(sups), axis=0)
        assert np.all(np.diff(medians) < 0), medians
        assert decreasing >= 18, f"{decreasing} of 20 seeds decrease"

    def test_ito_residual_of_linear_decay(self):
        cfg = small_config(noise={"modes": 0}, numerics=QUIET)
        ctx = prepare_run(cfg)
        record = run_trajectory(ctx)
        residual = ito_energy_residual(record, ctx)
        lam = ctx.basis.lambdas
        bound = 3.0 * ctx.dt**2 * (record.snapshots[:-1] ** 2 @ lam**3)
        assert np.all(np.abs(residual) <= bound + 1e-18)

    def test_ito_residual_needs_every_step(self):
        ctx = prepare_run(small_config(output={"cadence": 4}))
        with pytest.raises(SnapshotError):
            ito_energy_residual(run_trajectory(ctx), ctx)

    def test_manufactured_forcing_cancels_the_drift(self):
        ctx = prepare_run(small_config(noise={"modes": 0}))
        shape = np.zeros(ctx.n)
        shape[:3] = [0.05, -0.02, 0.01]
        forcing = manufactured_forcing(ctx, shape, lambda t: 1.0 + t, lambda t: 1.0)
        forced = prepare_run(ctx.config, basis=ctx.basis, forcing=forcing)
        t = 0.01
        state = synthesize(ctx.basis, (1.0 + t) * shape)
        drift = drift_coefficients(forced, state, t)
        expected = shape + (1.0 + t) * ctx.basis.lambdas * shape
        assert np.allclose(drift, expected, atol=1e-8)

    def test_forcing_norm_is_zero_without_forcing(self):
        ctx = prepare_run(small_config())
        assert np.all(forcing_norm2(ctx, np.linspace(0, 0.02, 5)) == 0.0)

    def test_table_forcing_interpolates(self):
        table = [[0.0, 0.0], [0.02, 2.0]]
        ctx = prepare_run(small_config(forcing={"kind": "table", "amplitude": 1.0, "table": table}))
        norms = forcing_norm2(ctx, np.array([0.0, 0.01, 0.02]))
        assert norms[0] == 0.0
        assert abs(norms[2] - 4.0 * norms[1]) < 1e-12 * norms[2]

    def test_modal_fast_path_matches_the_integrator(self):
        cfg = small_config(numerics=QUIET, initial={"kind": "zero"}, noise={"modes": 0})
        base = prepare_run(cfg)
        q = np.array([0.3, 0.2, 0.1])
        ctx = prepare_run(cfg, basis=base.basis, noise=modal_noise(base.basis, q))
        record = run_trajectory(ctx)
        fast = linear_modal_ensemble(base.basis.lambdas, q, ctx.dt, ctx.n_steps, 1, cfg.numerics.seed)
        assert np.allclose(record.final_coeffs[:3], fast[0], atol=1e-9)

    @pytest.mark.slow
    def test_linear_stationary_variance(self):
        lambdas = np.linspace(1.0, 10.0, 10)
        q = np.ones(10)
        dt, steps, paths = 1e-3, 5000, 4000
        final = linear_modal_ensemble(lambdas, q, dt, steps, paths, seed=9)
        expected = q**2 / (lambdas * (2.0 + dt * lambdas))
        variance = (final**2).mean(axis=0)
        stderr = expected * np.sqrt(2.0 / paths)
        assert np.all(np.abs(variance - expected) <= 4.0 * stderr), variance / expected
