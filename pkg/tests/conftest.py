import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from synthpriv.minicorpus import build_mini_corpus  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mini_corpus():
    return build_mini_corpus(seed=0)


@pytest.fixture(scope="session")
def mini_packets(mini_corpus):
    return [p for c in mini_corpus for p in c.packets]


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"CRITERION {n} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
