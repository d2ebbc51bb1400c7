import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sddde.model import ModelParams, default_params

settings.register_profile("sddde", deadline=None, derandomize=True, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sddde")


def params_with(**kw) -> ModelParams:
    doc = default_params().to_dict()
    doc.update(kw)
    return ModelParams.from_dict(doc)


# q constant 0.9 and gamma identically zero: the two equations decouple
DECOUPLED = dict(a_w=1.0, p_w=1.0, mu_w=0.1, k_a=0.0, k_p=0.0)
# q(0) = -0.6 < 0 everywhere: solutions decay to the trivial equilibrium
DECAYING = dict(a_w=0.4, p_w=0.5, mu_w=0.5)
# large feedback gain and slow progenitor clearance: the positive equilibrium loses stability
OSCILLATORY = dict(a_w=0.9, p_w=4.0, mu_w=0.2, k_a=5.0, mu=0.1)


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def decoupled():
    return params_with(**DECOUPLED)


@pytest.fixture(scope="session")
def decaying():
    return params_with(**DECAYING)


@pytest.fixture(scope="session")
def oscillatory():
    return params_with(**OSCILLATORY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def log(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {detail}"
        lines.append((number, line))
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
