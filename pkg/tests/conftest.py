import numpy as np
import pytest

from propsim.graph import from_edges


def random_graph(n, m, rng, directed=False, weighted=False, self_loops=False):
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    if not self_loops:
        keep = src != dst
        src, dst = src[keep], dst[keep]
    w = rng.uniform(0.5, 3.0, src.size) if weighted else None
    return from_edges(n, src, dst, w, directed=directed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def graph200():
    return random_graph(200, 800, np.random.default_rng(7))


MODEL_PARAMS = {
    "SI": {"beta": 0.1},
    "SIS": {"beta": 0.1, "lambda": 0.2},
    "SIR": {"beta": 0.1, "lambda": 0.2},
    "SEIR_DT": {"beta": 0.1, "lambda": 0.2, "alpha": 0.3},
    "IC": {"p": 0.1},
    "THRESHOLD": {"tau": 0.3},
    "VOTER": {},
    "MAJORITY_RULE": {"q": 3},
    "HK": {"epsilon": 0.3},
}


# -- acceptance summary ------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    marks = {k for k in report.keywords if k.startswith("test_criterion_")}
    if not marks:
        return
    number = int(next(iter(marks)).split("_")[2])
    entry = _CRITERIA.setdefault(number, {"outcome": "PASS", "detail": "", "name": report.nodeid})
    detail = dict(report.user_properties).get("detail")
    if detail:
        entry["detail"] = detail
    if report.skipped and entry["outcome"] == "PASS":
        entry["outcome"] = "SKIP"
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        entry["detail"] = (entry["detail"] + "; " if entry["detail"] else "") + reason.removeprefix("Skipped: ")
    elif report.failed:
        entry["outcome"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {e['outcome']}  {e['detail']}")
