import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)

_criteria: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def small_matches():
    from axialcast.data import generate_dataset

    return generate_dataset(10, seed=5)


@pytest.fixture(scope="session")
def small_examples(small_matches):
    from axialcast.data import prepare_examples

    return prepare_examples(small_matches)


@pytest.fixture
def criterion(request):
    """Records a measured detail string for the acceptance summary."""
    holder = {"detail": ""}
    request.node._criterion = holder
    return holder


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    holder = getattr(item, "_criterion", None)
    if holder is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        name = item.get_closest_marker("criterion")
        label = name.args[0] if name else item.name
        _criteria.append(("PASS" if rep.passed else "FAIL", label, holder["detail"]))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for status, label, detail in _criteria:
        terminalreporter.write_line(f"{status} {label}" + (f" :: {detail}" if detail else ""))
