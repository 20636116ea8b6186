"""Default station configuration and the routines that produced it.

The reference case (full ventilation, no battery, braking wasted) is
matched to a daily consumption of 2160 kWh and a PM10 profile with mean
108 and maximum 182 µg/m³. The constants below are the frozen output of
``calibrate_reference``; rerun it after changing the profiles.
"""

from __future__ import annotations

import warnings
from types import SimpleNamespace
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .model import (
    AirParams,
    BatteryParams,
    EconomicParams,
    StationModel,
    TimeGrid,
    VentilationModes,
    step_pm10,
    two_tier_tariff,
)
from .scenarios import DeterministicProfiles, ProfileConfig

TARGET_ENERGY_KWH = 2160.0
TARGET_COST_EUR = 161.0
TARGET_PM10_MEAN = 108.0
TARGET_PM10_MAX = 182.0

# 60 m³/s at full ventilation: rho_v * 30 kW / 3600 = 60
VENT_HIGH_KW = 30.0
VENT_LOW_KW = VENT_HIGH_KW / 3.0
RHO_V = 7200.0  # m³/kWh
STATION_VOLUME = 60000.0  # m³
DELTA_DEP = 0.2  # 1/h

ALPHA = 0.6211405638587983
BETA = 0.007159481874711319
DEMAND_SCALE = 1.037463976945245
LAMBDA_COMFORT = 3.0e-3  # € per µg/m³ per step, from select_lambda
LAMBDA_SCAN = (5e-4, 1e-3, 1.5e-3, 2e-3, 3e-3, 5e-3)


def default_profiles(g: TimeGrid | None = None, demand_scale: float = DEMAND_SCALE) -> DeterministicProfiles:
    return DeterministicProfiles.build(g or TimeGrid(), ProfileConfig(demand_scale=demand_scale))


def default_model(lambda_comfort: float = LAMBDA_COMFORT, alpha: float = ALPHA, beta: float = BETA) -> StationModel:
    g = TimeGrid()
    return StationModel(
        time=g,
        battery=BatteryParams(),
        air=AirParams(alpha=alpha, delta_dep=DELTA_DEP, beta=beta, rho_v=RHO_V, volume=STATION_VOLUME),
        ventilation=VentilationModes(power_low=VENT_LOW_KW, power_high=VENT_HIGH_KW),
        economics=EconomicParams(two_tier_tariff(g), lambda_comfort),
    )


def reference_pm10(m: StationModel, profiles: DeterministicProfiles, c0: float | None = None) -> np.ndarray:
    """PM10 path c_0..c_T under full ventilation."""
    T = m.time.T
    c = np.empty(T + 1)
    c[0] = profiles.c_o[0] if c0 is None else c0
    u = m.ventilation.power_high
    for t in range(T):
        w = SimpleNamespace(n=profiles.n[t + 1], c_o=profiles.c_o[t + 1])
        c[t + 1] = step_pm10(m.air, m.time, c[t], u, w)
    return c



@dataclass(frozen=True)
class ReferenceMetrics:
    energy_kwh: float
    cost_eur: float
    pm10_mean: float
    pm10_max: float


def reference_metrics(m: StationModel, profiles: DeterministicProfiles) -> ReferenceMetrics:
    """Bill, consumption and PM10 statistics of the reference case (braking wasted)."""
    T = m.time.T
    draw = profiles.d[1 : T + 1] + m.ventilation.power_high
    c = reference_pm10(m, profiles)[1:]
    return ReferenceMetrics(
        energy_kwh=float(np.sum(draw) * m.time.delta_hours),
        cost_eur=float(np.dot(m.economics.tariff, draw)),
        pm10_mean=float(c.mean()),
        pm10_max=float(c.max()),
    )


def calibrate_air(m: StationModel, profiles: DeterministicProfiles, mean=TARGET_PM10_MEAN, peak=TARGET_PM10_MAX):
    """(alpha, beta) such that the reference PM10 path has the given mean and maximum.

    alpha is solved from the maximum for each trial beta; beta from the mean.
    """

    def path(alpha, beta):
        air = replace(m.air, alpha=alpha, beta=beta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return reference_pm10(replace(m, air=air), profiles)[1:]

    def alpha_for(beta):
        return brentq(lambda a: path(a, beta).max() - peak, 1e-4, 10.0, xtol=1e-14)

    beta = brentq(lambda b: path(alpha_for(b), b).mean() - mean, 0.0, 0.05, xtol=1e-14)
    return alpha_for(beta), beta


def calibrate_demand(m: StationModel, g: TimeGrid | None = None, energy=TARGET_ENERGY_KWH) -> float:
    """Demand scale such that the reference consumption equals ``energy`` kWh."""
    base = default_profiles(g or m.time, 1.0)
    T = m.time.T
    dt = m.time.delta_hours
    vent = m.ventilation.power_high * T * dt
    return float((energy - vent) / (np.sum(base.d[1 : T + 1]) * dt))


def calibrate_reference(m: StationModel | None = None) -> dict:
    m = m or default_model()
    scale = calibrate_demand(m)
    profiles = default_profiles(m.time, scale)
    alpha, beta = calibrate_air(m, profiles)
    cal = replace(m, air=replace(m.air, alpha=alpha, beta=beta))
    return {"demand_scale": scale, "alpha": alpha, "beta": beta, "reference": reference_metrics(cal, profiles).__dict__}


def select_lambda(candidates, pm10_of, reference_mean: float):
    """Smallest λ whose optimized mean PM10 does not exceed the reference mean.

    ``pm10_of(lam)`` returns the optimized mean PM10 for one candidate.
    Returns (λ, list of (λ, pm10)); λ is None if no candidate qualifies.
    """
    tried = []
    for lam in sorted(candidates):
        pm = float(pm10_of(lam))
        tried.append((lam, pm))
        if pm <= reference_mean:
            return lam, tried
    return None, tried
