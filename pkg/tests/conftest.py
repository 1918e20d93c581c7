import numpy as np
import pytest

from tpshock.acceptance import burgers_shock
from tpshock.flux_models import QUADRATIC2_DEFAULT, build_model, characteristic_data
from tpshock.pde_core import GridSpec
from tpshock.profiles import solve_stationary_profile, stationary_coefficients


@pytest.fixture(scope="session")
def shock():
    """Burgers shock on the default grid: (model, grid, profile, chardata)."""
    return burgers_shock()


@pytest.fixture(scope="session")
def shock_coeffs(shock):
    return stationary_coefficients(shock[2])


@pytest.fixture(scope="session")
def small_shock():
    """Burgers shock on a shorter domain for the dense/spatial-dynamics tests."""
    return burgers_shock(L=20.0, dx=0.05)


@pytest.fixture(scope="session")
def system_shock():
    model = build_model({"name": "quadratic2"})
    um = QUADRATIC2_DEFAULT["u_minus"]
    up = QUADRATIC2_DEFAULT["u_plus"]
    grid = GridSpec(L=40.0, dx=0.05)
    prof = solve_stationary_profile(model, um, up, grid)
    return model, grid, prof, characteristic_data(model, um, up)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    import sys
    mod = next((m for name, m in list(sys.modules.items())
                if name.endswith("test_acceptance") and hasattr(m, "RESULT_LINES")), None)
    if mod is None or not mod.RESULT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULT_LINES):
        terminalreporter.write_line(mod.RESULT_LINES[n])
