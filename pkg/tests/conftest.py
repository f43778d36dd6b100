import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from brats_inpaint.phantoms import make_phantom, write_phantom_dataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom_cases():
    return [make_phantom(f"Phantom-{i:05d}", seed=0)[0] for i in range(6)]


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("phantoms")
    write_phantom_dataset(root, n_cases=3, seed=0, dims=(56, 56, 56))
    return root


# --- acceptance reporting -------------------------------------------------------------
# Tests marked ``@pytest.mark.acceptance(n, "label")`` get one PASS/FAIL/SKIP line each,
# printed at the end of the run (also when output capture is on).

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, label = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE[(n, item.nodeid)] = (status, label, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (n, _), (status, label, detail) in sorted(_ACCEPTANCE.items()):
        line = f"{status} criterion {n:>2}: {label}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
