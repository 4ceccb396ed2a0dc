"""
Tests for the command-line front end: exit codes, outputs and determinism.
"""

import sys
import os
import json

import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.cli.main import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, EXIT_USAGE, cli_main
from spe2d.services.storage import read_manifest

TINY = """
[domain]
nx = 8
nz = 8

[noise]
modes = 3

[numerics]
n_galerkin = 8
dt = 1e-3
t_end = 0.005
"""

EXPLODING = """
[domain]
nx = 8
nz = 8

[forcing]
kind = "fixed"
amplitude = 100.0

[initial]
kind = "zero"

[numerics]
n_galerkin = 8
dt = 1e-2
t_end = 0.2
blowup_factor = 1.5
blowup_m = 1e12
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


class TestExitCodes:
    """Mapping of failures to exit codes."""

    def test_unknown_command(self):
        assert cli_main(["frobnicate"]) == EXIT_USAGE

    def test_bad_option_value(self, tiny_config):
        assert cli_main(["ensemble", "--config", str(tiny_config), "--trajectories", "x"]) == EXIT_USAGE

    def test_zero_threads(self, tiny_config, tmp_path):
        argv = ["ensemble", "--config", str(tiny_config), "--threads", "0", "--outdir", str(tmp_path / "o")]
        assert cli_main(argv) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert cli_main(["validate-config", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[physics]\nsalinity = 35.0\n")
        assert cli_main(["validate-config", "--config", str(path)]) == EXIT_CONFIG

    def test_blowup(self, tmp_path):
        path = tmp_path / "boom.toml"
        path.write_text(EXPLODING)
        outdir = tmp_path / "out"
        assert cli_main(["simulate", "--config", str(path), "--outdir", str(outdir)]) == EXIT_BLOWUP
        manifest = read_manifest(outdir / "manifest.json")
        assert manifest.trajectories[0].status == "numerical-blowup"


class TestCommands:
    """Outputs of the main subcommands."""

    def test_validate_config_echoes_normalized_json(self, tiny_config, capsys):
        assert cli_main(["validate-config", "--config", str(tiny_config), "--seed", "5"]) == EXIT_OK
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["numerics"]["seed"] == 5
        assert echoed["domain"]["nx"] == 8

    def test_simulate_is_reproducible(self, tiny_config, tmp_path):
        for name in ("a", "b"):
            argv = ["simulate", "--config", str(tiny_config), "--outdir", str(tmp_path / name)]
            assert cli_main(argv) == EXIT_OK
        for name in ("diagnostics_0000.csv", "snapshots_0000.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_simulate_resumes_from_checkpoint(self, tiny_config, tmp_path):
        first = tmp_path / "first"
        argv = ["simulate", "--config", str(tiny_config), "--outdir", str(first), "--save-checkpoint"]
        assert cli_main(argv) == EXIT_OK
        manifest = read_manifest(first / "manifest.json")
        assert "checkpoint_0000.bin" in manifest.files
        argv = [
            "simulate",
            "--config",
            str(tiny_config),
            "--outdir",
            str(tmp_path / "second"),
            "--checkpoint",
            str(first / "checkpoint_0000.bin"),
        ]
        assert cli_main(argv) == EXIT_OK

    def test_ensemble_stats_do_not_depend_on_threads(self, tiny_config, tmp_path):
        for threads in ("1", "2"):
            argv = [
                "ensemble",
                "--config",
                str(tiny_config),
                "--trajectories",
                "3",
                "--threads",
                threads,
                "--no-snapshots",
                "--outdir",
                str(tmp_path / threads),
            ]
            assert cli_main(argv) == EXIT_OK
        one = (tmp_path / "1" / "ensemble_stats.csv").read_bytes()
        two = (tmp_path / "2" / "ensemble_stats.csv").read_bytes()
        assert one == two
        assert not (tmp_path / "1" / "snapshots_0000.bin").exists()

    def test_eigen_writes_the_basis(self, tiny_config, tmp_path):
        outdir = tmp_path / "eigen"
        assert cli_main(["eigen", "--config", str(tiny_config), "--modes", "8", "--outdir", str(outdir)]) == EXIT_OK
        manifest = read_manifest(outdir / "manifest.json")
        assert "basis.bin" in manifest.files and "eigenvalues.csv" in manifest.files

    def test_gronwall_bench(self, tiny_config, tmp_path):
        argv = [
            "bench-gronwall",
            "--config",
            str(tiny_config),
            "--trials",
            "5",
            "--steps",
            "50",
            "--outdir",
            str(tmp_path / "g"),
        ]
        assert cli_main(argv) == EXIT_OK
        assert (tmp_path / "g" / "gronwall.csv").exists()

    def test_decompose(self, tiny_config, tmp_path):
        outdir = tmp_path / "d"
        assert cli_main(["decompose", "--config", str(tiny_config), "--outdir", str(outdir)]) == EXIT_OK
        files = read_manifest(outdir / "manifest.json").files
        for name in ("identity_z.csv", "identity_x.csv", "monitors.csv", "uhat_residual.csv"):
            assert name in files
