import sys

import numpy as np
import pytest

from occuhet import Dataset, FrequencyTable

TROUT = FrequencyTable({0: 45, 1: 11, 2: 17, 3: 4})


@pytest.fixture
def trout():
    return TROUT


@pytest.fixture
def trout_csv(tmp_path):
    patterns = {0: (0, 0, 0), 1: (1, 0, 0), 2: (0, 1, 1), 3: (1, 1, 1)}
    lines = ["site,y1,y2,y3"]
    i = 0
    for k, m in TROUT.counts.items():
        for _ in range(m):
            lines.append(f"s{i}," + ",".join(map(str, patterns[k])))
            i += 1
    path = tmp_path / "trout.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def regression_data(seed=0, n=300, theta=(1.0, -1.0, 1.0), psi=0.75):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal(n), rng.standard_normal(n)
    lam = np.exp(theta[0] + theta[1] * x1 + theta[2] * x2)
    y = np.where(rng.random(n) < psi, rng.poisson(lam), 0)
    return Dataset(y, 1, {"x1": x1, "x2": x2})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
