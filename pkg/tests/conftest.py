import numpy as np
import pytest

from subway_ems.calibration import default_model, default_profiles
from subway_ems.model import (
    AirParams,
    BatteryParams,
    EconomicParams,
    StationModel,
    TimeGrid,
    VentilationModes,
)


def tiny_model(T=3, lam=0.0, prices=None, alpha=0.05, beta=0.001, delta_dep=0.2, rho=0.95, dt=1 / 30):
    g = TimeGrid(delta_hours=dt, horizon_steps=T, day_length=T * dt)
    if prices is None:
        prices = [0.1 * dt * (1 + (t % 2)) for t in range(T)]
    return StationModel(
        time=g,
        battery=BatteryParams(rho_c=rho, rho_d=rho, capacity=100.0, soc_min=30.0, soc_max=90.0),
        air=AirParams(alpha=alpha, delta_dep=delta_dep, beta=beta, rho_v=7200.0, volume=60000.0),
        ventilation=VentilationModes(10.0, 30.0),
        economics=EconomicParams(tuple(prices), lam),
    )


@pytest.fixture(scope="session")
def station():
    return default_model()


@pytest.fixture(scope="session")
def profiles(station):
    return default_profiles(station.time)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
