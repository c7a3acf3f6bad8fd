import pytest

from impulse_delay.band import optimize_qc
from impulse_delay.models import forex, labor
from impulse_delay.threshold import optimize_a


@pytest.fixture(scope="session")
def fx_problem():
    """delay -> (model, cost) for the exchange-rate model at the reference parameters."""
    return {d: forex.build(forex.ForexParams(150.0, 50.0, 0.2, d)) for d in (0.0, 1.0)}


@pytest.fixture(scope="session")
def fx_solutions(fx_problem):
    return {d: optimize_a(*mc) for d, mc in fx_problem.items()}


@pytest.fixture(scope="session")
def labor_params():
    return {d: labor.LaborParams(delta_lag=d) for d in (0.0, 0.5)}


@pytest.fixture(scope="session")
def labor_problem(labor_params):
    return {d: labor.build(p) for d, p in labor_params.items()}


@pytest.fixture(scope="session")
def labor_solutions(labor_problem):
    return {d: optimize_qc(*mc) for d, mc in labor_problem.items()}
