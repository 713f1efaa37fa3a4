import os

import numpy as np
import pytest

from gmwb.contract import ContractParams
from gmwb.market import ModelParams


@pytest.fixture
def const_model():
    return ModelParams.constant(0.05, 0.2)


@pytest.fixture
def vasicek_model():
    return ModelParams(r0=0.05, theta=0.05, kappa=0.0349, sigma_r=0.02, rho=0.3, sigma_s=0.05,
                       rate_mode="vasicek")


@pytest.fixture
def contract():
    return ContractParams(fee=0.0135)


def zscore(sample, target):
    sample = np.asarray(sample, dtype=float)
    return abs(sample.mean() - target) / (sample.std(ddof=1) / np.sqrt(sample.size))


# acceptance lines are echoed live and repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GMWB_LONG") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale suite; set GMWB_LONG=1 to run")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
