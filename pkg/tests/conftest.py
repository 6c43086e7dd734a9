import math

import numpy as np
import pytest

from complab import make_builtin_model

SV_PARAMS = {"s0": 100.0, "y0": math.log(0.2), "kappa": 1.0, "theta": math.log(0.2),
             "gamma": 0.5, "rho": -0.5, "r": 0.0}

# lines collected by test_acceptance and printed at the end of the session
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def heat_model():
    return make_builtin_model("correlated_bm", {"sigma": np.eye(2).tolist(), "x0": [1.0, 2.0]})


@pytest.fixture
def gbm_model():
    return make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.2, "r": 0.0})


@pytest.fixture
def sv_model():
    return make_builtin_model("expou_sv", SV_PARAMS)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
