"""
Structured logging for the spe2d simulator.

Provides colorful, formatted terminal output showing:
  - Run banners with the resolved configuration
  - Step progress at the output cadence
  - Stopping-time monitor hits and numerical blowups
  - Probe / bench summaries and written file inventories
"""

import logging
import sys

# ---------------------------------------------------------------------------
# ANSI color codes (Windows 10+ supports these natively)
# ---------------------------------------------------------------------------

RESET = "\033[0m"
BOLD = "\033[1m"
DIM = "\033[2m"

RED = "\033[91m"
GREEN = "\033[92m"
YELLOW = "\033[93m"
BLUE = "\033[94m"
MAGENTA = "\033[95m"
CYAN = "\033[96m"
WHITE = "\033[97m"
GRAY = "\033[90m"

# ---------------------------------------------------------------------------
# Icons
# ---------------------------------------------------------------------------

ICON_RUN = "🌊"
ICON_EIGEN = "🎼"
ICON_PROBE = "🔍"
ICON_BENCH = "🎲"
ICON_FILE = "💾"
ICON_OK = "✅"
ICON_WARN = "⚠️"
ICON_ERROR = "❌"
ICON_TIME = "⏱️"
ICON_ARROW = "→"
ICON_STOP = "🛑"
ICON_GRAPH = "📊"

# ---------------------------------------------------------------------------
# Logger setup
# ---------------------------------------------------------------------------

logger = logging.getLogger("spe2d")


class FlushHandler(logging.StreamHandler):
    """StreamHandler that flushes after every emit so progress shows up
    immediately even when stderr is redirected to a buffered pipe."""

    def emit(self, record):
        super().emit(record)
        self.flush()


class RunFormatter(logging.Formatter):
    """Pass-through formatter; messages arrive pre-formatted."""

    def format(self, record):
        return record.getMessage()


def _enable_ansi_windows():
    """Enable ANSI escape codes on Windows consoles (cmd.exe, PowerShell)."""
    if sys.platform != "win32":
        return
    try:
        import ctypes
        kernel32 = ctypes.windll.kernel32
        for handle_id in (-11, -12):
            handle = kernel32.GetStdHandle(handle_id)
            mode = ctypes.c_ulong()
            kernel32.GetConsoleMode(handle, ctypes.byref(mode))
            kernel32.SetConsoleMode(handle, mode.value | 0x0004)
    except Exception:
        pass  # colors off, everything else still works


def setup_logging(level=logging.INFO):
    """Configure the spe2d logger. ``level`` may be an int or a level name."""
    _enable_ansi_windows()
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    handler = FlushHandler(sys.stderr)
    handler.setFormatter(RunFormatter())
    handler.setLevel(level)

    logger.setLevel(level)
    logger.handlers.clear()
    logger.addHandler(handler)
    logger.propagate = False


# ---------------------------------------------------------------------------
# Logging helpers
# ---------------------------------------------------------------------------

def _separator(char="─", length=70, color=GRAY):
    return f"{color}{char * length}{RESET}"


def log_separator():
    logger.info(_separator())


def log_header(text, icon="", color=CYAN):
    logger.info("")
    logger.info(_separator("═", 70, color))
    logger.info(f"{color}{BOLD}  {icon}  {text}{RESET}")
    logger.info(_separator("═", 70, color))


def log_section(text, icon="", color=BLUE):
    logger.info(f"\n{color}{BOLD}{icon}  {text}{RESET}")
    logger.info(_separator("─", 60, DIM))


def log_step(text, icon=ICON_ARROW, color=WHITE):
    logger.info(f"  {color}{icon} {text}{RESET}")


def log_kv(key, value, indent=4):
    """Log a key-value pair."""
    spaces = " " * indent
    logger.info(f"{spaces}{CYAN}{key}:{RESET} {WHITE}{value}{RESET}")


def log_success(text):
    logger.info(f"  {GREEN}{ICON_OK} {text}{RESET}")


def log_warning(text):
    logger.warning(f"  {YELLOW}{ICON_WARN} {text}{RESET}")


def log_error(text):
    logger.error(f"  {RED}{ICON_ERROR} {text}{RESET}")


# ---------------------------------------------------------------------------
# Simulation-specific logging
# ---------------------------------------------------------------------------

def log_run_start(kind: str, config_hash: str, seed: int, details: dict | None = None):
    """Log the banner for a workflow run."""
    log_header(f"{kind.upper()}  [{config_hash[:8]}...]", ICON_RUN, MAGENTA)
    log_kv("Seed", seed, 2)
    for key, value in (details or {}).items():
        log_kv(key, value, 2)


def log_progress(trajectory: int, step: int, t: float, h_norm2: float, v_norm2: float):
    """Log one cadence line of a running trajectory (debug level)."""
    logger.debug(
        f"    {DIM}traj {trajectory:>4} step {step:>7}  t={t:.4f}"
        f"  |U|²={h_norm2:.4e}  ‖U‖²={v_norm2:.4e}{RESET}"
    )


def log_monitor_hit(trajectory: int, monitor: str, step: int, t: float):
    """Log a stopping-time monitor firing."""
    logger.info(
        f"  {YELLOW}{ICON_STOP} traj {trajectory}: {BOLD}{monitor}{RESET}"
        f"{YELLOW} fired at step {step} (t={t:.4f}){RESET}"
    )


def log_blowup(trajectory: int, step: int, t: float):
    log_error(f"traj {trajectory}: numerical blowup at step {step} (t={t:.4f})")


def log_eigen_summary(n_modes: int, lambdas, counts: dict):
    """Log the merged eigenbasis."""
    log_section(f"EIGENBASIS ({n_modes} modes)", ICON_EIGEN, CYAN)
    if n_modes:
        log_kv("λ range", f"{lambdas[0]:.6e} … {lambdas[-1]:.6e}", 4)
    for comp, count in counts.items():
        log_kv(f"{comp}-block", count, 4)


def log_probe_summary(estimate: str, used: int, skipped: int, max_ratio: float, passed: bool | None):
    """Log an estimate-probe or Lipschitz-probe result."""
    color = GREEN if passed or passed is None else RED
    log_section(f"PROBE {estimate}", ICON_PROBE, color)
    log_kv("Samples used", used, 4)
    log_kv("Skipped (0/0)", skipped, 4)
    log_kv("Max ratio", f"{max_ratio:.6e}", 4)
    if passed is not None:
        (log_success if passed else log_warning)(
            "stable under refinement" if passed else "ratio not stable under refinement"
        )


def log_bench_summary(name: str, rows: list[tuple[str, object]]):
    """Log a bench table summary given (label, value) pairs."""
    log_section(f"BENCH {name}", ICON_BENCH, BLUE)
    for label, value in rows:
        log_kv(label, value, 4)


def log_outputs(paths):
    """Log the written file inventory."""
    if not paths:
        log_warning("No output files written")
        return
    log_section(f"OUTPUTS ({len(paths)} files)", ICON_FILE, GREEN)
    for path in paths:
        logger.info(f"    {ICON_FILE} {WHITE}{path}{RESET}")


def log_command_complete(command: str, duration_ms: float, exit_code: int):
    """Log the end of a CLI command."""
    color = GREEN if exit_code == 0 else RED
    log_section(f"{command.upper()} COMPLETE", ICON_TIME, color)
    log_kv("Duration", f"{duration_ms:.0f}ms", 4)
    log_kv("Exit code", exit_code, 4)
    logger.info("")
