"""
Command-line front end.

    python -m spe2d <command> [--config PATH] [--seed N] [--outdir DIR] ...

Exit codes: 0 success, 1 usage error, 2 config error, 3 numerical blowup in
a mandatory trajectory, 4 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from spe2d.errors import ConfigError, Spe2dError
from spe2d.schemas.schemas import SimConfig
from spe2d.services.analysis import (
    anisotropic_identity_residuals,
    decomposition_frame,
    linear_companion_summary,
    monitor_frame,
    run_coupled_decomposition,
    uhat_residual,
)
from spe2d.services.integrator import (
    RunStatus,
    cauchy_diagnostic,
    forcing_norm2,
    prepare_run,
    run_trajectory,
)
from spe2d.services.settings import (
    config_hash,
    default_config,
    get_settings,
    normalized_config,
    override_config,
    parse_config,
)
from spe2d.services.spectral import get_basis
from spe2d.services.storage import (
    build_manifest,
    encode_basis,
    encode_checkpoint,
    ensemble_frame,
    read_checkpoint,
    utc_now,
    write_outputs,
)
from spe2d.orchestration.ensemble import map_trajectories, run_ensemble
from spe2d.tools.benches import (
    bounded_generator,
    brownian_max_generator,
    decay_generator,
    ode_generator,
    record_generator,
    reflection_probability,
    stochastic_gronwall_bench,
    stoptime_exceedance_bench,
    strong_norm_generator,
)
from spe2d.tools.estimate_probe import ESTIMATES, run_estimate_probe
from spe2d.utils.logging import (
    log_command_complete,
    log_error,
    log_eigen_summary,
    log_outputs,
    log_run_start,
    log_warning,
    setup_logging,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_INTERNAL = 4


class UsageError(Spe2dError):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run config (defaults when omitted)")
    common.add_argument("--seed", type=_u64, help="Override numerics.seed")
    common.add_argument("--outdir", type=Path, help="Output directory")
    common.add_argument("--threads", type=int, help="Worker threads (fallback: SPE2D_THREADS)")
    common.add_argument("--cadence", type=int, help="Override output.cadence")
    common.add_argument("--log-level", help="Logging level (fallback: SPE2D_LOG_LEVEL)")

    parser = _Parser(prog="spe2d", description="Stochastic 2-D primitive equations lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="Run one trajectory")
    p.add_argument("--trajectory", type=int, default=0)
    p.add_argument("--checkpoint", type=Path, help="Resume from a checkpoint file")
    p.add_argument("--save-checkpoint", action="store_true", help="Write the final checkpoint")

    p = sub.add_parser("ensemble", parents=[common], help="Run many trajectories")
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--no-snapshots", action="store_true")

    p = sub.add_parser("eigen", parents=[common], help="Build and store the eigenbasis")
    p.add_argument("--modes", type=int, help="Number of modes (default numerics.n_galerkin)")

    p = sub.add_parser("probe", parents=[common], help="Probe a bilinear-term inequality")
    p.add_argument("--estimate", default="all", choices=["all", *ESTIMATES])
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--no-refine", action="store_true")

    p = sub.add_parser("cauchy", parents=[common], help="Galerkin Cauchy diagnostic")
    p.add_argument("--orders", type=_int_list, default=[8, 16, 32])

    p = sub.add_parser("decompose", parents=[common], help="U = Û + Ǔ diagnostics")
    p.add_argument("--trajectory", type=int, default=0)

    p = sub.add_parser("bench-stoptime", parents=[common], help="Stopping-time exceedance bench")
    p.add_argument("--generator", choices=["brownian", "bounded", "simulation"], default="brownian")
    p.add_argument("--thresholds", type=_float_list, default=[1.0, 2.0, 3.0])
    p.add_argument("--budgets", type=_float_list, default=[0.5])
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)

    p = sub.add_parser("bench-gronwall", parents=[common], help="Stochastic Gronwall bench")
    p.add_argument("--generator", choices=["ode", "decay", "strong-norm"], default="ode")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)

    sub.add_parser("validate-config", parents=[common], help="Validate and echo a config")
    return parser


# ---------------------------------------------------------------------------
# Shared resolution
# ---------------------------------------------------------------------------

def _resolve_config(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else default_config()
    updates = {}
    if args.seed is not None:
        updates["numerics.seed"] = args.seed
    if args.cadence is not None:
        updates["output.cadence"] = args.cadence
    return override_config(cfg, updates) if updates else cfg


def _outdir(args, cfg: SimConfig) -> Path:
    if args.outdir is not None:
        return args.outdir
    if cfg.output.directory != "runs":
        return Path(cfg.output.directory)
    return Path(get_settings().outdir)


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.threads
    return get_settings().threads


def _blowup_exit(records) -> int:
    if any(r.status is RunStatus.BLOWUP for r in records):
        log_warning("at least one trajectory ended in numerical blowup")
        return EXIT_BLOWUP
    return EXIT_OK


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _simulate(args, cfg: SimConfig) -> int:
    started = utc_now()
    outdir = _outdir(args, cfg)
    log_run_start("simulate", config_hash(cfg), cfg.numerics.seed, {"Trajectory": args.trajectory})
    ctx = prepare_run(cfg)
    checkpoint = read_checkpoint(args.checkpoint) if args.checkpoint else None
    record = run_trajectory(ctx, trajectory=args.trajectory, checkpoint=checkpoint)
    blobs = {}
    if args.save_checkpoint:
        blobs[f"checkpoint_{record.trajectory:04d}.bin"] = encode_checkpoint(record.checkpoint())
    manifest = build_manifest("simulate", cfg, [record], started)
    files = write_outputs([record], manifest, outdir, snapshots=cfg.output.snapshots, blobs=blobs)
    log_outputs(files)
    return _blowup_exit([record])


def _ensemble(args, cfg: SimConfig) -> int:
    started = utc_now()
    threads = _threads(args)
    log_run_start(
        "ensemble", config_hash(cfg), cfg.numerics.seed, {"Trajectories": args.trajectories, "Threads": threads}
    )
    if args.trajectories < 1:
        raise UsageError("--trajectories must be >= 1")
    ctx = prepare_run(cfg)
    records = run_ensemble(ctx, args.trajectories, threads)
    manifest = build_manifest("ensemble", cfg, records, started)
    files = write_outputs(
        records,
        manifest,
        _outdir(args, cfg),
        snapshots=cfg.output.snapshots and not args.no_snapshots,
        tables={"ensemble_stats.csv": ensemble_frame(records)},
    )
    log_outputs(files)
    return _blowup_exit(records)


def _eigen(args, cfg: SimConfig) -> int:
    started = utc_now()
    modes = args.modes or cfg.numerics.n_galerkin
    log_run_start("eigen", config_hash(cfg), cfg.numerics.seed, {"Modes": modes})
    try:
        basis = get_basis(cfg.domain, cfg.physics, modes)
    except ValueError as exc:
        raise ConfigError("numerics.n_galerkin", str(exc)) from exc
    log_eigen_summary(basis.size, basis.lambdas, basis.component_counts())
    table = pd.DataFrame(
        {"k": np.arange(1, basis.size + 1), "lambda": basis.lambdas, "component": basis.components}
    )
    files = write_outputs(
        [],
        build_manifest("eigen", cfg, [], started),
        _outdir(args, cfg),
        tables={"eigenvalues.csv": table},
        blobs={"basis.bin": encode_basis(basis)},
    )
    log_outputs(files)
    return EXIT_OK


def _probe(args, cfg: SimConfig) -> int:
    started = utc_now()
    threads = _threads(args)
    names = list(ESTIMATES) if args.estimate == "all" else [args.estimate]
    log_run_start("probe", config_hash(cfg), cfg.numerics.seed, {"Estimates": len(names), "Samples": args.samples})
    tables = {}
    summary = []
    for name in names:
        report = run_estimate_probe(
            name, args.samples, cfg.numerics.seed, cfg.domain, cfg.physics, refine=not args.no_refine, threads=threads
        )
        tables[f"probe_{name}.csv"] = pd.DataFrame([row.model_dump() for row in report.rows])
        summary.append(
            {
                "estimate": name,
                "used": report.used,
                "skipped": report.skipped,
                "max_ratio": report.max_ratio,
                "refined_max_ratio": report.refined_max_ratio,
                "passed": report.passed,
            }
        )
    tables["probe_summary.csv"] = pd.DataFrame(summary)
    files = write_outputs([], build_manifest("probe", cfg, [], started), _outdir(args, cfg), tables=tables)
    log_outputs(files)
    return EXIT_OK


def _cauchy(args, cfg: SimConfig) -> int:
    started = utc_now()
    log_run_start("cauchy", config_hash(cfg), cfg.numerics.seed, {"Orders": args.orders})
    report, records = cauchy_diagnostic(cfg, args.orders)
    table = pd.DataFrame([row.model_dump() for row in report.rows])
    manifest = build_manifest("cauchy", cfg, [], started)
    files = write_outputs([], manifest, _outdir(args, cfg), tables={"cauchy.csv": table})
    log_outputs(files)
    return _blowup_exit(records)


def _decompose(args, cfg: SimConfig) -> int:
    started = utc_now()
    log_run_start("decompose", config_hash(cfg), cfg.numerics.seed, {"Trajectory": args.trajectory})
    run = run_coupled_decomposition(cfg, trajectory=args.trajectory)
    frame = decomposition_frame(run)
    dz, dx = anisotropic_identity_residuals(run)
    residual = uhat_residual(run)
    tables = {
        "decomposition.csv": frame,
        "identity_z.csv": dz,
        "identity_x.csv": dx,
        "monitors.csv": monitor_frame(run, frame),
        "uhat_residual.csv": pd.DataFrame(
            {"step": frame["step"].iloc[: residual.size], "t": frame["t"].iloc[: residual.size], "residual": residual}
        ),
        "linear_companion.csv": pd.DataFrame([linear_companion_summary(run)]),
    }
    manifest = build_manifest("decompose", cfg, [run.record], started)
    files = write_outputs([run.record], manifest, _outdir(args, cfg), snapshots=cfg.output.snapshots, tables=tables)
    log_outputs(files)
    return _blowup_exit([run.record])


def _bench_stoptime(args, cfg: SimConfig) -> int:
    started = utc_now()
    seed = cfg.numerics.seed
    log_run_start("bench-stoptime", config_hash(cfg), seed, {"Generator": args.generator, "Trials": args.trials})
    oracle = None
    if args.generator == "brownian":
        samples = brownian_max_generator(args.horizon, args.steps, args.trials, seed)
        oracle = lambda m: reflection_probability(m, args.horizon)  # noqa: E731
    elif args.generator == "bounded":
        samples = bounded_generator(max(args.thresholds) / 2.0, args.horizon, args.steps, args.trials, seed)
    else:
        ctx = prepare_run(cfg)
        records = map_trajectories(lambda r: run_trajectory(ctx, trajectory=r), args.trials, _threads(args))
        samples = record_generator(records)
    report = stoptime_exceedance_bench(samples, args.thresholds, args.horizon, args.budgets, oracle)
    tables = {
        "stoptime.csv": pd.DataFrame([row.model_dump() for row in report.rows]),
        "stoptime_chain.csv": pd.DataFrame([row.model_dump() for row in report.chain]),
    }
    files = write_outputs([], build_manifest("bench-stoptime", cfg, [], started), _outdir(args, cfg), tables=tables)
    log_outputs(files)
    if not report.monotone:
        log_warning("exceedance estimates are not monotone in the threshold")
    return EXIT_OK


def _bench_gronwall(args, cfg: SimConfig) -> int:
    started = utc_now()
    seed = cfg.numerics.seed
    log_run_start("bench-gronwall", config_hash(cfg), seed, {"Generator": args.generator, "Trials": args.trials})
    k = None
    if args.generator == "ode":
        paths = ode_generator(args.rate, args.horizon, args.steps, args.trials, seed)
        k = args.rate * args.horizon
    elif args.generator == "decay":
        paths = decay_generator(args.rate, args.horizon, args.steps, args.trials, seed)
        k = 0.0
    else:
        ctx = prepare_run(cfg)
        records = map_trajectories(lambda r: run_trajectory(ctx, trajectory=r), args.trials, _threads(args))
        paths = strong_norm_generator(records, forcing_norm2(ctx, records[0].times))
    report = stochastic_gronwall_bench(paths, args.generator, k=k)
    table = pd.DataFrame([row.model_dump() for row in report.rows])
    files = write_outputs(
        [], build_manifest("bench-gronwall", cfg, [], started), _outdir(args, cfg), tables={"gronwall.csv": table}
    )
    log_outputs(files)
    return EXIT_OK


def _validate_config(args, cfg: SimConfig) -> int:
    sys.stdout.write(normalized_config(cfg) + "\n")
    return EXIT_OK


HANDLERS = {
    "simulate": _simulate,
    "ensemble": _ensemble,
    "eigen": _eigen,
    "probe": _probe,
    "cauchy": _cauchy,
    "decompose": _decompose,
    "bench-stoptime": _bench_stoptime,
    "bench-gronwall": _bench_gronwall,
    "validate-config": _validate_config,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    start = time.perf_counter()
    command = "spe2d"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        setup_logging(args.log_level or get_settings().log_level)
        cfg = _resolve_config(args)
        code = HANDLERS[command](args, cfg)
    except UsageError as exc:
        setup_logging(get_settings().log_level)
        log_error(f"usage: {exc}")
        code = EXIT_USAGE
    except ConfigError as exc:
        log_error(f"config error: {exc}")
        code = EXIT_CONFIG
    except Spe2dError as exc:
        log_error(f"{type(exc).__name__}: {exc}")
        code = EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log_error(f"internal error: {type(exc).__name__}: {exc}")
        code = EXIT_INTERNAL
    log_command_complete(command, (time.perf_counter() - start) * 1000.0, code)
    return code


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
