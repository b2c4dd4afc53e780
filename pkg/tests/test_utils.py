import logging

import pytest
from rich.logging import RichHandler

from carbon_trace_simulator.utils import (
    PACKAGE_LOGGER,
    configure_logging,
    git_describe,
    network_summary,
)


@pytest.mark.parametrize(
    "verbose, level",
    [(0, logging.WARNING), (1, logging.INFO), (2, logging.DEBUG), (5, logging.DEBUG)],
)
def test_configure_logging_levels(verbose, level):
    logger = configure_logging(verbose)
    assert logger.name == PACKAGE_LOGGER
    assert logger.level == level


def test_configure_logging_keeps_one_handler():
    configure_logging(1)
    logger = configure_logging(2)
    assert sum(isinstance(h, RichHandler) for h in logger.handlers) == 1
    assert not logger.propagate


def test_git_describe_outside_a_repository(tmp_path):
    assert git_describe(tmp_path) == "unknown"


def test_git_describe_returns_text():
    assert isinstance(git_describe(), str)


def test_network_summary(nine_bus):
    summary = network_summary(nine_bus)
    assert summary["buses"] == 9
    assert summary["bus_kinds"] == {"distribution": 8, "slack": 1}
    assert summary["generator_kinds"] == {"conventional": 1, "der_pv": 3}
    assert summary["loads"] == 8
    assert summary["ev_stations"] == 0
    assert summary["expected_load_mw"] == pytest.approx(7.3)
    assert 0 < summary["penetration"] < 0.2


def test_network_summary_of_standard_fixture(standard):
    summary = network_summary(standard)
    assert summary["buses"] == 1006
    assert summary["penetration"] == pytest.approx(0.2, rel=1e-9)
    assert summary["penetration_target"] == 0.2
