import numpy as np
import pytest
import torch

from endogen.toy import toy_dataset


@pytest.fixture(scope="session")
def toy_manifests(request):
    """Full 64x64 toy set (240 images per domain), cached across sessions."""
    root = request.config.cache.mkdir("endogen_toy")
    return toy_dataset(root, n_per_domain=240, size=64, seed=0)


@pytest.fixture(scope="session")
def small_toy_manifests(tmp_path_factory):
    return toy_dataset(tmp_path_factory.mktemp("toy_small"), n_per_domain=12, size=32, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


# --- acceptance summary -----------------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    verdict = "PASS" if rep.passed else "FAIL"
    if rep.when != "call":
        verdict += f" ({rep.when} error)"
    item.config.stash[ACCEPTANCE_LINES].append((number, f"criterion {number} {verdict}: {title}. {detail}".rstrip()))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
