import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from compatcbf.barrier import ClassKappa, FunctionBarrier  # noqa: E402
from compatcbf.config import load_scenario  # noqa: E402
from compatcbf.controller import CompatController, FeedbackLaw, Weight  # noqa: E402
from compatcbf.dynamics import AffineDynamics, two_link_arm  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def arm():
    return two_link_arm()


@pytest.fixture(scope="session")
def rd1():
    return load_scenario("reldeg1_reference")


@pytest.fixture(scope="session")
def rd2():
    return load_scenario("reldeg2_reference")


@pytest.fixture(scope="session")
def rd2_interior():
    return load_scenario("reldeg2_interior")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def toy_system(alpha_gain=0.5):
    """x' = u, k = -x, V = x^2/2, h = 1 + x; see oracles.TOY_NU_STAR."""
    model = AffineDynamics(
        1, 1,
        drift=lambda x: np.zeros_like(x),
        input_matrix=lambda x: np.ones(x.shape + (1,)),
    )
    law = FeedbackLaw(control=lambda x: -x, lyapunov=lambda x: 0.5 * x[..., 0] ** 2,
                      lyapunov_grad=lambda x: x)
    barrier = FunctionBarrier(value=lambda x: 1.0 + x[..., 0], grad=lambda x: np.ones_like(x),
                              alpha=ClassKappa(alpha_gain))
    return model, CompatController(law, barrier, Weight.IDENTITY)


def random_states(rng, n, q_scale=np.pi, v_scale=2.0):
    return np.concatenate([rng.uniform(-q_scale, q_scale, (n, 2)), rng.uniform(-v_scale, v_scale, (n, 2))],
                          axis=1)
