"""
Persistence of run outputs.

Scalar series go to CSV (pandas), fields to small versioned binary files
(snapshots, eigenbases, checkpoints), provenance to a JSON manifest. Every
file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from spe2d import __version__
from spe2d.errors import SnapshotError
from spe2d.schemas.schemas import DomainSpec, PhysicalParams, RunManifest, SimConfig, TrajectoryStatusRow
from spe2d.services.integrator import Checkpoint, TrajectoryRecord
from spe2d.services.settings import config_hash
from spe2d.services.spectral import EigenBasis

# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

CSV_SCHEMA_VERSION = 1
FORMAT_VERSION = 1

SNAPSHOT_MAGIC = b"SPE2SNAP"
BASIS_MAGIC = b"SPE2BASE"
CHECKPOINT_MAGIC = b"SPE2CKPT"

_HEADER = struct.Struct("<8sH")
_SNAPSHOT_SHAPE = struct.Struct("<QQ")
_BASIS_SHAPE = struct.Struct("<QQQQ")
_CHECKPOINT_FIELDS = struct.Struct("<QQQQddd")

DIAGNOSTIC_COLUMNS = [
    "step",
    "t",
    "h_norm2",
    "v_norm2",
    "a_norm2",
    "u_h2_norm2",
    "sup_v",
    "int_a",
    "int_u",
    "tau_m_hit",
    "tau_n_hit",
]

ENSEMBLE_COLUMNS = [
    "step",
    "t",
    "count",
    "mean_h_norm2",
    "var_h_norm2",
    "mean_v_norm2",
    "var_v_norm2",
    "mean_a_norm2",
    "var_a_norm2",
]

FLOAT_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise OSError(f"could not write {path}: {exc}") from exc
    return path


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


# ---------------------------------------------------------------------------
# Diagnostics tables
# ---------------------------------------------------------------------------

def record_frame(record: TrajectoryRecord) -> pd.DataFrame:
    """Per-step diagnostics of one trajectory (columns ``DIAGNOSTIC_COLUMNS``)."""
    steps = record.steps
    frame = pd.DataFrame(
        {
            "step": steps,
            "t": record.times,
            "h_norm2": record.h_norm2,
            "v_norm2": record.v_norm2,
            "a_norm2": record.a_norm2,
            "u_h2_norm2": record.u_h2_norm2,
            "sup_v": record.sup_v,
            "int_a": record.int_a,
            "int_u": record.int_u,
        }
    )
    frame["tau_m_hit"] = (steps >= record.tau_m_step).astype(int) if record.tau_m_step is not None else 0
    frame["tau_n_hit"] = (steps >= record.tau_n_step).astype(int) if record.tau_n_step is not None else 0
    return frame[DIAGNOSTIC_COLUMNS]


def ensemble_frame(records: list[TrajectoryRecord]) -> pd.DataFrame:
    """Per-step mean and variance across trajectories, reduced in trajectory order."""
    ordered = sorted(records, key=lambda r: r.trajectory)
    long = pd.concat([record_frame(r).assign(trajectory=r.trajectory) for r in ordered], ignore_index=True)
    grouped = long.groupby("step", sort=True)
    out = pd.DataFrame({"t": grouped["t"].first(), "count": grouped["h_norm2"].count()})
    for name in ("h_norm2", "v_norm2", "a_norm2"):
        out[f"mean_{name}"] = grouped[name].mean()
        out[f"var_{name}"] = grouped[name].var(ddof=1).fillna(0.0)
    return out.reset_index()[ENSEMBLE_COLUMNS]


def read_diagnostics(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise SnapshotError(f"diagnostics file not found: {path}")
    return pd.read_csv(path, float_precision="round_trip")


# ---------------------------------------------------------------------------
# Binary codecs
# ---------------------------------------------------------------------------

def _header(magic: bytes) -> bytes:
    return _HEADER.pack(magic, FORMAT_VERSION)


def _check_header(data: bytes, magic: bytes) -> int:
    if len(data) < _HEADER.size:
        raise SnapshotError("file too short for a header")
    found, version = _HEADER.unpack_from(data)
    if found != magic:
        raise SnapshotError(f"bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported format version {version}")
    return _HEADER.size


def _read_array(data: bytes, offset: int, dtype: str, count: int) -> tuple[np.ndarray, int]:
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(data):
        raise SnapshotError("file truncated")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy(), offset + size


def encode_snapshots(steps: np.ndarray, coeffs: np.ndarray) -> bytes:
    coeffs = np.asarray(coeffs, dtype="<f8")
    count, n = coeffs.shape
    return b"".join(
        [
            _header(SNAPSHOT_MAGIC),
            _SNAPSHOT_SHAPE.pack(count, n),
            np.asarray(steps, dtype="<i8").tobytes(),
            coeffs.tobytes(),
        ]
    )


def decode_snapshots(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    offset = _check_header(data, SNAPSHOT_MAGIC)
    count, n = _SNAPSHOT_SHAPE.unpack_from(data, offset)
    offset += _SNAPSHOT_SHAPE.size
    steps, offset = _read_array(data, offset, "<i8", count)
    coeffs, _ = _read_array(data, offset, "<f8", count * n)
    return steps, coeffs.reshape(count, n)


def encode_basis(basis: EigenBasis) -> bytes:
    meta = json.dumps(
        {"domain": basis.domain.model_dump(), "physics": basis.params.model_dump()}, sort_keys=True
    ).encode("utf-8")
    nx, nz = basis.domain.shape
    return b"".join(
        [
            _header(BASIS_MAGIC),
            _BASIS_SHAPE.pack(basis.size, nx, nz, len(meta)),
            meta,
            np.asarray(basis.lambdas, dtype="<f8").tobytes(),
            np.asarray(basis.components, dtype="i1").tobytes(),
            np.asarray(basis.modes, dtype="<f8").tobytes(),
        ]
    )


def decode_basis(data: bytes) -> EigenBasis:
    offset = _check_header(data, BASIS_MAGIC)
    n, nx, nz, meta_len = _BASIS_SHAPE.unpack_from(data, offset)
    offset += _BASIS_SHAPE.size
    meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    domain = DomainSpec.model_validate(meta["domain"])
    params = PhysicalParams.model_validate(meta["physics"])
    if domain.shape != (nx, nz):
        raise SnapshotError("basis header disagrees with its domain record")
    lambdas, offset = _read_array(data, offset, "<f8", n)
    components, offset = _read_array(data, offset, "i1", n)
    modes, _ = _read_array(data, offset, "<f8", n * nx * nz)
    return EigenBasis(domain, params, lambdas, components.astype(np.int8), modes.reshape(n, nx, nz))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    coeffs = np.asarray(checkpoint.coeffs, dtype="<f8")
    return b"".join(
        [
            _header(CHECKPOINT_MAGIC),
            _CHECKPOINT_FIELDS.pack(
                checkpoint.step,
                checkpoint.seed,
                checkpoint.trajectory,
                coeffs.size,
                checkpoint.sup_v,
                checkpoint.int_a,
                checkpoint.int_u,
            ),
            coeffs.tobytes(),
        ]
    )


def decode_checkpoint(data: bytes) -> Checkpoint:
    offset = _check_header(data, CHECKPOINT_MAGIC)
    step, seed, trajectory, n, sup_v, int_a, int_u = _CHECKPOINT_FIELDS.unpack_from(data, offset)
    coeffs, _ = _read_array(data, offset + _CHECKPOINT_FIELDS.size, "<f8", n)
    return Checkpoint(step, coeffs, seed, trajectory, sup_v, int_a, int_u)


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise SnapshotError(f"file not found: {path}")
    return path.read_bytes()


def write_snapshots(record: TrajectoryRecord, path: str | Path) -> Path:
    return atomic_write_bytes(path, encode_snapshots(record.snapshot_steps, record.snapshots))


def read_snapshots(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    return decode_snapshots(_read_bytes(path))


def write_basis(basis: EigenBasis, path: str | Path) -> Path:
    return atomic_write_bytes(path, encode_basis(basis))


def read_basis(path: str | Path) -> EigenBasis:
    return decode_basis(_read_bytes(path))


def write_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(checkpoint))


def read_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(_read_bytes(path))


# ---------------------------------------------------------------------------
# Manifest and output inventory
# ---------------------------------------------------------------------------

def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def status_row(record: TrajectoryRecord) -> TrajectoryStatusRow:
    return TrajectoryStatusRow(
        trajectory=record.trajectory,
        status=record.status.value,
        steps=record.final_step,
        final_time=float(record.times[-1]),
        tau_m_step=record.tau_m_step,
        tau_n_step=record.tau_n_step,
    )


def build_manifest(
    command: str,
    cfg: SimConfig,
    records: Iterable[TrajectoryRecord] = (),
    started_at: str = "",
    seed: Optional[int] = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        config_hash=config_hash(cfg),
        code_version=__version__,
        seed=cfg.numerics.seed if seed is None else seed,
        started_at=started_at,
        trajectories=[status_row(r) for r in sorted(records, key=lambda r: r.trajectory)],
    )


def write_manifest(manifest: RunManifest, outdir: str | Path) -> Path:
    text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    return atomic_write_text(Path(outdir) / "manifest.json", text)


def read_manifest(path: str | Path) -> RunManifest:
    return RunManifest.model_validate_json(_read_bytes(path))


def write_outputs(
    records: list[TrajectoryRecord],
    manifest: RunManifest,
    outdir: str | Path,
    snapshots: bool = True,
    tables: dict[str, pd.DataFrame] | None = None,
    blobs: dict[str, bytes] | None = None,
) -> list[str]:
    """Write per-trajectory CSVs and snapshots, extra tables and blobs, then the manifest.

    Returns the inventory (relative paths) recorded in the manifest; the
    manifest itself is always written last.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    for record in sorted(records, key=lambda r: r.trajectory):
        name = f"diagnostics_{record.trajectory:04d}.csv"
        write_csv(record_frame(record), outdir / name)
        files.append(name)
        if snapshots:
            name = f"snapshots_{record.trajectory:04d}.bin"
            write_snapshots(record, outdir / name)
            files.append(name)
    for name, frame in (tables or {}).items():
        write_csv(frame, outdir / name)
        files.append(name)
    for name, data in (blobs or {}).items():
        atomic_write_bytes(outdir / name, data)
        files.append(name)
    manifest.files = files
    manifest.finished_at = utc_now()
    write_manifest(manifest, outdir)
    return files
