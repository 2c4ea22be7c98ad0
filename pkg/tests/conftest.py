import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "levelconf",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("levelconf")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def kernel2():
    from levelconf.kernel import get_kernel
    return get_kernel("sim2d")


@pytest.fixture(scope="session")
def case1_sample():
    from levelconf.models import Elliptic
    return Elliptic(1.0).sample(1000, np.random.default_rng(11))


# --------------------------------------------------------------------------- #
# acceptance verdict lines, echoed once at the end of the session

def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """``verdict(number, ok, detail)`` records and prints a PASS/FAIL line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        return ok

    return record
