"""Shared fixtures and the acceptance-summary reporter."""

from __future__ import annotations

import numpy as np
import pytest

from fanct.data import add_gaussian_noise, shepp_logan
from fanct.geometry import make_desk_geometry
from fanct.projector import forward_project

# Acceptance tests register one line each; printed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {status} - {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def desk64():
    return make_desk_geometry(64, n_views=36)


@pytest.fixture(scope="session")
def desk32():
    return make_desk_geometry(32, n_views=12)


@pytest.fixture(scope="session")
def phantom64():
    return shepp_logan(64)


@pytest.fixture(scope="session")
def sino64(desk64, phantom64):
    clean = forward_project(phantom64, desk64)
    return add_gaussian_noise(clean, 0.01, seed=42)
