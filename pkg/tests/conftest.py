import math
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slowlight.adiabaton import AdiabatonSpec
from slowlight.model import EnvelopeSpec, MediumParams, ShapeSpec

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def kink_spec(a=1.0, g=100.0, omega0=1.0, center=-5.0, phi=None, envelope=None, xi_ref=None):
    """Constant-envelope adiabaton with a tanh-kink polarization angle."""
    return AdiabatonSpec(
        envelope or EnvelopeSpec("constant", omega0),
        ShapeSpec("tanh-kink", math.pi / 2, a, center),
        phi or ShapeSpec("constant", 0.0),
        MediumParams(g),
        tau_ref=0.0,
        xi_ref=center - 10 * a if xi_ref is None else xi_ref,
    )


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def record_verdict(tag, ok, detail):
    ACCEPTANCE[tag] = f"{tag} {'PASS' if ok else 'FAIL'} {detail}"
    print(ACCEPTANCE[tag])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for tag in sorted(ACCEPTANCE, key=lambda t: (int(re.match(r"A(\d+)", t).group(1)), t)):
            terminalreporter.write_line(ACCEPTANCE[tag])
