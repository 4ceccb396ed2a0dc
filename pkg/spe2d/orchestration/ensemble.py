"""
Ensemble orchestration: independent trajectories over a thread pool.

Workers share the immutable run context; trajectory r draws only from its
own counter stream, so results do not depend on the schedule. Records come
back in trajectory order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from spe2d.services.integrator import RunContext, RunStatus, TrajectoryRecord, run_trajectory
from spe2d.utils.logging import log_kv, log_step

logger = logging.getLogger("spe2d")

T = TypeVar("T")


def map_trajectories(fn: Callable[[int], T], trajectories: int, threads: int = 1) -> list[T]:
    """``[fn(0), fn(1), ...]`` evaluated on ``threads`` workers."""
    if threads <= 1 or trajectories <= 1:
        return [fn(r) for r in range(trajectories)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trajectories)))


def run_ensemble(ctx: RunContext, trajectories: int, threads: int = 1) -> list[TrajectoryRecord]:
    log_step(f"ensemble: {trajectories} trajectories on {threads} thread(s)")
    records = map_trajectories(lambda r: run_trajectory(ctx, trajectory=r), trajectories, threads)
    counts = {status.value: sum(r.status is status for r in records) for status in RunStatus}
    for name, count in counts.items():
        log_kv(name, count)
    return records
