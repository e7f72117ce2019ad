import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from liemotion.data.formats import default_skeleton  # noqa: E402
from liemotion.data.preprocess import preprocess  # noqa: E402
from liemotion.data.synthetic import default_action_specs, synthesize_dataset  # noqa: E402


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def small_manifest(skeleton):
    return synthesize_dataset(default_action_specs(), 6, skeleton, np.random.default_rng(11))


@pytest.fixture(scope="session")
def small_dataset(small_manifest):
    return preprocess(small_manifest)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
