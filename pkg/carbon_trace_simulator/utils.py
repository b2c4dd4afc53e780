import logging
import subprocess
from collections import Counter
from pathlib import Path

from rich.logging import RichHandler

PACKAGE_LOGGER = "carbon_trace_simulator"


def configure_logging(verbose: int = 0):
    """
    Installs one RichHandler on the package logger.

    Args:
        verbose: 0 -> WARNING, 1 -> INFO, 2 or more -> DEBUG.
    """
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG

    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger


def git_describe(cwd=None) -> str:
    """`git describe --always --dirty` of the source tree, or "unknown"."""
    cwd = cwd or Path(__file__).resolve().parent
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


def network_summary(net):
    """
    Returns counts and expected energy figures of a network.

    Returns:
        dict: buses per kind, branches, generators per kind, loads, EV
        stations, expected load and RES output (MW) and their ratio.
    """
    expected_load = net.expected_load()
    expected_res = net.expected_res()
    return {
        "buses": len(net.buses),
        "bus_kinds": dict(sorted(Counter(b.kind for b in net.buses).items())),
        "branches": len(net.branches),
        "generators": len(net.generators),
        "generator_kinds": dict(sorted(Counter(g.kind for g in net.generators).items())),
        "loads": len(net.loads),
        "ev_stations": len(net.ev_stations),
        "base_mva": net.base_mva,
        "expected_load_mw": expected_load,
        "expected_res_mw": expected_res,
        "penetration": expected_res / expected_load if expected_load > 0 else 0.0,
        "penetration_target": net.penetration_target,
    }
