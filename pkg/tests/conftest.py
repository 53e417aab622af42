import pytest

from robustlc.synthetic import synthetic_panel

_criteria = {}


@pytest.fixture(scope="session")
def panel():
    ds, truth = synthetic_panel(seed=0)
    return ds


@pytest.fixture(scope="session")
def panel_truth():
    return synthetic_panel(seed=0)


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        name = report.nodeid.split("::")[-1]
        _criteria[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num = name.split("_")[2]
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {int(num):2d}  {_criteria[name]}  {label}")
