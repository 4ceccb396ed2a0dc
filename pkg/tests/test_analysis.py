"""
Tests for the Û + Ǔ decomposition and the anisotropic diagnostics built on it.
"""

import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.errors import SnapshotError
from spe2d.services.analysis import (
    IDENTITY_COLUMNS,
    TERM_NAMES,
    advance_linear,
    anisotropic_identity_residuals,
    decomposed_terms,
    decomposition_frame,
    linear_companion_summary,
    monitor_frame,
    monitors_x,
    run_coupled_decomposition,
    uhat_residual,
)
from spe2d.services.integrator import (
    RunStatus,
    drift_coefficients,
    prepare_run,
    run_trajectory,
)
from spe2d.services.settings import config_from_dict


def small_config(**sections):
    data = {
        "domain": {"nx": 10, "nz": 10},
        "noise": {"modes": 4, "kind": "affine"},
        "numerics": {"n_galerkin": 12, "dt": 1e-3, "t_end": 0.01},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return config_from_dict(data)


class TestCompanion:
    """The linear companion Ǔ on the shared noise path."""

    def test_no_noise_means_no_companion(self):
        run = run_coupled_decomposition(small_config(noise={"modes": 0}))
        assert np.all(run.check_coeffs == 0.0)
        assert np.array_equal(run.hat_coeffs, run.coeffs)

    def test_linear_problem_is_all_companion(self):
        cfg = small_config(
            noise={"kind": "additive"},
            initial={"kind": "zero"},
            numerics={"buoyancy": False, "advection": False, "coriolis": False},
        )
        run = run_coupled_decomposition(cfg)
        assert np.abs(run.hat_coeffs).max() <= 1e-15
        assert np.abs(run.check_coeffs).max() > 0

    def test_parts_add_up(self):
        run = run_coupled_decomposition(small_config())
        for i in (0, 5, run.size - 1):
            total = run.hat_state(i) + run.check_state(i)
            assert np.allclose(total.stack(), run.state(i).stack(), atol=1e-14)

    def test_coarse_cadence_is_overridden(self):
        run = run_coupled_decomposition(small_config(output={"cadence": 5}))
        assert run.record.has_every_step()

    def test_needs_every_step(self):
        ctx = prepare_run(small_config(output={"cadence": 5}))
        with pytest.raises(SnapshotError):
            advance_linear(ctx, run_trajectory(ctx))

    def test_companion_frozen_after_blowup(self):
        cfg = small_config(
            forcing={"kind": "fixed", "amplitude": 100.0},
            initial={"kind": "zero"},
            numerics={"dt": 1e-2, "t_end": 0.2, "blowup_factor": 1.5, "blowup_m": 1e12},
        )
        run = run_coupled_decomposition(cfg)
        assert run.record.status is RunStatus.BLOWUP
        assert run.check_coeffs.shape[0] == run.ctx.n_steps + 1
        last = run.record.times.size - 1
        assert np.all(run.check_coeffs[last:] == run.check_coeffs[last])

    def test_summary_of_silent_companion(self):
        run = run_coupled_decomposition(small_config(noise={"modes": 0}))
        summary = linear_companion_summary(run)
        assert summary == {
            "sup_check_a_norm2": 0.0,
            "int_check_a_norm2": 0.0,
            "sup_check_h2_norm2": 0.0,
        }


class TestRandomEquation:
    """Û solves a pathwise equation with the decomposed nonlinearity."""

    def setup_method(self):
        self.run = run_coupled_decomposition(small_config())

    def test_terms_sum_to_the_drift(self):
        ctx = self.run.ctx
        for i in (0, 4, 9):
            terms = decomposed_terms(self.run, i)
            assert terms.shape == (len(TERM_NAMES), ctx.n)
            drift = drift_coefficients(ctx, self.run.state(i), self.run.time(i))
            scale = max(1.0, np.abs(drift).max())
            assert np.allclose(terms.sum(axis=0), drift, atol=1e-12 * scale)

    def test_residual_is_the_implicit_lag(self):
        lam = self.run.ctx.basis.lambdas
        hat = self.run.hat_coeffs
        residual = uhat_residual(self.run)
        expected = np.linalg.norm(lam * (hat[:-1] - hat[1:]), axis=1)
        assert residual.shape == expected.shape
        assert np.allclose(residual, expected, rtol=1e-6, atol=1e-12)

    def test_residual_window(self):
        full = uhat_residual(self.run)
        assert np.array_equal(uhat_residual(self.run, 2, 6), full[2:6])


class TestFrames:
    """Identity, decomposition and monitor tables."""

    def setup_method(self):
        self.run = run_coupled_decomposition(small_config())

    def test_identity_frames(self):
        z_frame, x_frame = anisotropic_identity_residuals(self.run)
        for frame in (z_frame, x_frame):
            assert list(frame.columns) == IDENTITY_COLUMNS
            assert len(frame) == self.run.size - 1
            assert np.all(np.isfinite(frame.to_numpy(dtype=float)))
            assert (frame["energy"] >= 0).all()

    def test_decomposition_frame(self):
        frame = decomposition_frame(self.run)
        assert len(frame) == self.run.size
        for name in ("r1", "r2", "r3", "r4"):
            assert (frame[name] >= 0).all(), name
        assert np.array_equal(frame["h_norm2"].to_numpy(), self.run.record.h_norm2)

    def test_r2_carries_the_companion_term(self):
        run = run_coupled_decomposition(small_config(noise={"kind": "additive"}))
        c = 2.0
        frame = decomposition_frame(run, c=c)
        hat_h = frame["hat_h_norm2"].to_numpy()
        hat_v = frame["hat_v_norm2"].to_numpy()
        check_v = frame["check_v_norm2"].to_numpy()
        check_strong = frame["check_h2_norm2"].to_numpy()
        expected = c * (1.0 + hat_h) * hat_v + c * (1.0 + hat_v + check_v) * check_strong
        assert np.allclose(frame["r2"].to_numpy(), expected, rtol=1e-14, atol=0.0)
        assert (check_strong[1:] > 0).all()
        assert (frame["r2"].to_numpy()[1:] > (c * (1.0 + hat_h) * hat_v)[1:]).all()

    def test_principal_dissipation_column(self):
        z_frame, x_frame = anisotropic_identity_residuals(self.run)
        for frame in (z_frame, x_frame):
            assert (frame["j_principal"] >= 0).all()
            terms = frame[[f"j_{name}" for name in TERM_NAMES]].sum(axis=1)
            expected = frame["rate"] + frame["dissipation"] - terms
            assert np.allclose(frame["residual"], expected, rtol=1e-10, atol=1e-9)

    def test_monitors_are_nondecreasing(self):
        monitors = monitor_frame(self.run)
        for name in ("x1", "x2", "x"):
            assert np.all(np.diff(monitors[name].to_numpy()) >= 0), name

    def test_monitor_lookup(self):
        monitors = monitor_frame(self.run)
        final = monitors.iloc[-1]
        assert monitors_x(self.run) == (final["x1"], final["x2"], final["x"])
        assert monitors_x(self.run, t=-1.0) == (0.0, 0.0, 0.0)

    @pytest.mark.slow
    def test_identity_residual_shrinks_with_dt(self):
        worst = []
        for dt in (2e-3, 1e-3, 5e-4):
            cfg = small_config(noise={"modes": 0}, numerics={"dt": dt, "t_end": 0.02})
            z_frame, x_frame = anisotropic_identity_residuals(run_coupled_decomposition(cfg))
            worst.append(max(z_frame["residual"].abs().max(), x_frame["residual"].abs().max()))
        for coarse, fine in zip(worst, worst[1:]):
            assert np.log2(coarse / fine) >= 0.9, worst
