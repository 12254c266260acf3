import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sigfuse.dataset import SynthConfig, generate_synthetic  # noqa: E402

_criteria = {}


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 users x 8 genuine x 4 forgeries on a small canvas."""
    cfg = SynthConfig(users=4, genuine_per_user=8, skilled_per_user=4, canvas=(64, 128), seed=3)
    return generate_synthetic(cfg, tmp_path_factory.mktemp("small"))


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "ran": False})
    if call.when == "call":
        entry["ran"] = True
    if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}")
