"""
Tests for CSV tables, binary codecs and the run manifest.
"""

import sys
import os

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.errors import SnapshotError
from spe2d.services.integrator import prepare_run, run_trajectory
from spe2d.services.settings import config_from_dict
from spe2d.services.storage import (
    DIAGNOSTIC_COLUMNS,
    ENSEMBLE_COLUMNS,
    build_manifest,
    decode_basis,
    decode_checkpoint,
    decode_snapshots,
    encode_basis,
    encode_checkpoint,
    encode_snapshots,
    ensemble_frame,
    read_checkpoint,
    read_diagnostics,
    read_manifest,
    read_snapshots,
    record_frame,
    write_checkpoint,
    write_outputs,
)


def tiny_config(**numerics):
    data = {
        "domain": {"nx": 8, "nz": 8},
        "noise": {"modes": 3},
        "numerics": {"n_galerkin": 8, "dt": 1e-3, "t_end": 0.005, **numerics},
    }
    return config_from_dict(data)


class TestCodecs:
    """Versioned binary layouts."""

    def setup_method(self):
        self.ctx = prepare_run(tiny_config())
        self.record = run_trajectory(self.ctx, trajectory=1)

    def test_snapshots(self):
        steps, coeffs = decode_snapshots(encode_snapshots(self.record.snapshot_steps, self.record.snapshots))
        assert np.array_equal(steps, self.record.snapshot_steps)
        assert np.array_equal(coeffs, self.record.snapshots)

    def test_basis(self):
        basis = decode_basis(encode_basis(self.ctx.basis))
        assert basis.domain == self.ctx.basis.domain
        assert basis.params == self.ctx.basis.params
        assert np.array_equal(basis.lambdas, self.ctx.basis.lambdas)
        assert np.array_equal(basis.components, self.ctx.basis.components)
        assert np.array_equal(basis.modes, self.ctx.basis.modes)

    def test_checkpoint_file_resumes_the_run(self, tmp_path):
        path = write_checkpoint(self.record.checkpoint(2), tmp_path / "ckpt.bin")
        restored = read_checkpoint(path)
        assert restored.step == 2 and restored.trajectory == 1
        resumed = run_trajectory(self.ctx, trajectory=1, checkpoint=restored)
        assert np.array_equal(resumed.final_coeffs, self.record.final_coeffs)

    def test_wrong_magic(self):
        data = encode_checkpoint(self.record.checkpoint())
        with pytest.raises(SnapshotError):
            decode_snapshots(data)

    def test_truncated_payload(self):
        data = encode_snapshots(self.record.snapshot_steps, self.record.snapshots)
        with pytest.raises(SnapshotError):
            decode_snapshots(data[:-8])
        with pytest.raises(SnapshotError):
            decode_checkpoint(b"SPE2")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SnapshotError):
            read_snapshots(tmp_path / "absent.bin")


class TestTables:
    """Diagnostics and ensemble CSVs."""

    def setup_method(self):
        self.ctx = prepare_run(tiny_config())
        self.records = [run_trajectory(self.ctx, trajectory=r) for r in range(3)]

    def test_diagnostic_columns(self):
        frame = record_frame(self.records[0])
        assert list(frame.columns) == DIAGNOSTIC_COLUMNS
        assert len(frame) == self.ctx.n_steps + 1
        assert (frame["tau_m_hit"] == 0).all()

    def test_monitor_flags_switch_on(self):
        ctx = prepare_run(tiny_config(blowup_m=1e-9, stop_on_monitor=False))
        record = run_trajectory(ctx)
        frame = record_frame(record)
        hit = frame["tau_m_hit"].to_numpy()
        assert hit[-1] == 1
        assert np.all(np.diff(hit) >= 0)
        assert hit[record.tau_m_step] == 1

    def test_csv_reads_back_exactly(self, tmp_path):
        manifest = build_manifest("simulate", self.ctx.config, self.records[:1])
        write_outputs(self.records[:1], manifest, tmp_path)
        back = read_diagnostics(tmp_path / "diagnostics_0000.csv")
        pd.testing.assert_frame_equal(back, record_frame(self.records[0]), check_exact=True)

    def test_ensemble_statistics(self):
        frame = ensemble_frame(self.records)
        assert list(frame.columns) == ENSEMBLE_COLUMNS
        assert (frame["count"] == 3).all()
        values = np.stack([r.h_norm2 for r in self.records])
        assert np.allclose(frame["mean_h_norm2"], values.mean(axis=0), rtol=1e-14)
        assert np.allclose(frame["var_h_norm2"], values.var(axis=0, ddof=1), rtol=1e-10, atol=1e-30)

    def test_ensemble_ignores_record_order(self):
        forward = ensemble_frame(self.records)
        backward = ensemble_frame(list(reversed(self.records)))
        pd.testing.assert_frame_equal(forward, backward, check_exact=True)

    def test_missing_diagnostics(self, tmp_path):
        with pytest.raises(SnapshotError):
            read_diagnostics(tmp_path / "none.csv")


class TestManifest:
    """Output inventory and provenance."""

    def setup_method(self):
        self.ctx = prepare_run(tiny_config())
        self.record = run_trajectory(self.ctx)

    def test_inventory(self, tmp_path):
        manifest = build_manifest("simulate", self.ctx.config, [self.record])
        files = write_outputs([self.record], manifest, tmp_path, blobs={"extra.bin": b"\x00"})
        assert files == ["diagnostics_0000.csv", "snapshots_0000.bin", "extra.bin"]
        stored = read_manifest(tmp_path / "manifest.json")
        assert stored.files == files
        assert stored.trajectories[0].status == "completed"
        assert stored.finished_at

    def test_no_records_writes_only_the_manifest(self, tmp_path):
        manifest = build_manifest("eigen", self.ctx.config)
        assert write_outputs([], manifest, tmp_path) == []
        assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]

    def test_reruns_are_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            record = run_trajectory(self.ctx)
            manifest = build_manifest("simulate", self.ctx.config, [record])
            write_outputs([record], manifest, tmp_path / name)
        for name in ("diagnostics_0000.csv", "snapshots_0000.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
