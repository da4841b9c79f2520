import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jko_corrosion.io_cli import parse_config, simulate

settings.register_profile("ci", max_examples=60, deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

DEFAULT_CONFIG = """\
model.alpha = 1.0
model.lambda = 1.0
model.beta = 0.2
model.theta = 0.3
initial.X0 = 1.0
initial.rho0_kind = constant
initial.rho0_value = 0.5
discretization.n_cells = 200
discretization.tau = 0.001
discretization.t_final = 0.1
"""


@pytest.fixture(scope="session")
def default_config():
    return parse_config(DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def default_run(default_config):
    """(trajectory, ledger, exit code, record) of the 100-step default run."""
    logging.disable(logging.WARNING)
    try:
        return simulate(default_config)
    finally:
        logging.disable(logging.NOTSET)


def random_density(rng, n, X=None, lo=0.2, hi=1.5):
    from jko_corrosion.core import GridDensity
    X = rng.uniform(0.5, 2.0) if X is None else X
    return GridDensity(X, rng.uniform(lo, hi, n))


ACCEPTANCE_LINES: dict = {}


def report_criterion(number: int, ok: bool, detail: str) -> None:
    """Record and print one pass/fail line; the terminal summary repeats them in order."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
