from pathlib import Path

import pytest

from pooleval.oracle import SyntheticSpec, generate_synthetic_corpus

DATA = Path(__file__).resolve().parents[1] / "src" / "pooleval" / "data"


@pytest.fixture(scope="session")
def sample_config_path():
    return DATA / "sample_config.yaml"


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic_corpus(SyntheticSpec(seed=3, n_docs=60, n_queries=8))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
