import sys
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def gaussian_run():
    """cdol on N=2000 draws of N(0, I_8) with L=500 over log sigma in [-3, 2.3].

    Returns the report and the wall-clock seconds the estimate took.
    """
    from optloss.core import EstimatorConfig, NoiseGrid
    from optloss.estimators import estimate_curve
    from optloss.ingest import SyntheticSpec, generate

    ds = generate(SyntheticSpec.isotropic_gaussian(2000, 8, seed=0))
    start = time.perf_counter()
    rep = estimate_curve(ds, NoiseGrid.linspace(-3.0, 2.3, 16), "cdol",
                         EstimatorConfig(subset_size=500))
    return rep, time.perf_counter() - start


@pytest.fixture(scope="session")
def gaussian_report(gaussian_run):
    return gaussian_run[0]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok, detail = lines[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
