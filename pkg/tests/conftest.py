import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atomident.lti_core import Pole, generate_dataset, make_rng

settings.register_profile(
    "atomident", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("atomident")


@pytest.fixture
def rng():
    return make_rng(1234, 99)


@pytest.fixture
def first_order():
    """Noiseless data from a single atom at a known pole."""
    pole = Pole(0.8, np.pi / 3)
    g = np.zeros(400)
    n = np.arange(399)
    k = pole.value
    g[1:] = 2.0 * np.real((1.0 - abs(k) ** 2) * k**n)
    return pole, g, generate_dataset(g, 80, 0.0, 7)


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one pass/fail line per acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(label, ok, detail):
        lines.append((label, f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
