"""Station physics: battery, power balance, PM10 air quality, costs and policies.

All quantities use hours for time, kW for power, kWh for energy and
µg/m³ for concentrations. The step functions accept scalars or numpy
arrays so the optimizers and the simulator share one arithmetic path.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np

SOC_TOL = 1e-9


class StabilityWarning(RuntimeWarning):
    """Explicit Euler step for PM10 left its stability region."""


@dataclass(frozen=True)
class TimeGrid:
    delta_hours: float = 2.0 / 60.0
    horizon_steps: int = 720
    day_length: float = 24.0

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.delta_hours <= 0:
            raise ValueError("delta_hours must be positive")
        if abs(self.horizon_steps * self.delta_hours - self.day_length) > 1e-9 * self.day_length:
            raise ValueError(
                f"T*delta = {self.horizon_steps * self.delta_hours} h does not match "
                f"day_length = {self.day_length} h"
            )

    @classmethod
    def from_steps(cls, steps: int, day_length: float = 24.0) -> "TimeGrid":
        return cls(delta_hours=day_length / steps, horizon_steps=steps, day_length=day_length)

    @property
    def T(self) -> int:
        return self.horizon_steps

    def hours(self) -> np.ndarray:
        """Clock time (h) of every grid point 0..T."""
        return np.arange(self.horizon_steps + 1) * self.delta_hours


@dataclass(frozen=True)
class BatteryParams:
    rho_c: float = 0.95
    rho_d: float = 0.95
    capacity: float = 100.0  # kWh
    soc_min: float = 30.0  # kWh
    soc_max: float = 90.0  # kWh
    power_min: float = -100.0  # kW
    power_max: float = 100.0  # kW

    def __post_init__(self):
        if not (0 < self.rho_c <= 1 and 0 < self.rho_d <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not (0 <= self.soc_min < self.soc_max <= self.capacity):
            raise ValueError("need 0 <= soc_min < soc_max <= capacity")
        if not (self.power_min < 0 < self.power_max):
            raise ValueError("need power_min < 0 < power_max")


@dataclass(frozen=True)
class AirParams:
    alpha: float  # µg·h/m³, particle generation per (train/h)²
    delta_dep: float  # 1/h
    beta: float  # natural ventilation per train/h
    rho_v: float  # m³/kWh
    volume: float  # m³

    def __post_init__(self):
        if min(self.alpha, self.delta_dep, self.beta, self.rho_v) < 0:
            raise ValueError("air parameters must be nonnegative")
        if self.volume <= 0:
            raise ValueError("volume must be positive")

    @property
    def exchange_per_kw(self) -> float:
        """Air change rate (1/h) produced by one kW of ventilation."""
        return self.rho_v / self.volume


@dataclass(frozen=True)
class VentilationModes:
    power_low: float  # kW
    power_high: float  # kW

    def __post_init__(self):
        if not (0 <= self.power_low < self.power_high):
            raise ValueError("need 0 <= power_low < power_high")

    @property
    def powers(self) -> tuple[float, float]:
        return (self.power_low, self.power_high)


def airflow(air: AirParams, u_v):
    """Volumetric airflow (m³/s) delivered by ventilation power ``u_v`` (kW)."""
    return air.rho_v * u_v / 3600.0


@dataclass(frozen=True)
class EconomicParams:
    # tariff[t] is p_{t+1}: price of one kW drawn over the step ending at t+1,
    # already multiplied by the step length (€/kW per step).
    tariff: tuple[float, ...]
    lambda_comfort: float = 0.0  # € per (µg/m³) per step

    def __post_init__(self):
        object.__setattr__(self, "tariff", tuple(float(p) for p in self.tariff))
        if any(p < 0 for p in self.tariff):
            raise ValueError("tariff must be nonnegative")
        if self.lambda_comfort < 0:
            raise ValueError("lambda_comfort must be nonnegative")

    def price(self, t: int) -> float:
        return self.tariff[t]


@dataclass(frozen=True, slots=True)
class State:
    soc: float  # kWh
    pm10: float  # µg/m³


@dataclass(frozen=True, slots=True)
class Control:
    u_b: float  # kW, >0 charge
    u_v: float  # kW, one of the two ventilation powers


@dataclass(frozen=True, slots=True)
class NoiseVector:
    d: float  # kW
    b: float  # kW
    n: float  # trains/h
    c_o: float  # µg/m³


def zero_final_cost(x: State) -> float:
    return 0.0


@dataclass(frozen=True)
class StationModel:
    time: TimeGrid
    battery: BatteryParams
    air: AirParams
    ventilation: VentilationModes
    economics: EconomicParams
    final_cost: Callable[[State], float] = field(default=zero_final_cost, compare=False)

    def __post_init__(self):
        if len(self.economics.tariff) != self.time.T:
            raise ValueError(
                f"tariff has {len(self.economics.tariff)} entries, expected T={self.time.T}"
            )

    def with_lambda(self, lam: float) -> "StationModel":
        return replace(self, economics=replace(self.economics, lambda_comfort=lam))

    def to_dict(self) -> dict:
        return {
            "time": asdict(self.time),
            "battery": asdict(self.battery),
            "air": asdict(self.air),
            "ventilation": asdict(self.ventilation),
            "economics": {
                "tariff": list(self.economics.tariff),
                "lambda_comfort": self.economics.lambda_comfort,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StationModel":
        return cls(
            time=TimeGrid(**data["time"]),
            battery=BatteryParams(**data["battery"]),
            air=AirParams(**data["air"]),
            ventilation=VentilationModes(**data["ventilation"]),
            economics=EconomicParams(**data["economics"]),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "StationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- dynamics ---------------------------------------------------------------


def step_soc(p: BatteryParams, g: TimeGrid, soc, u_b):
    """One step of the state-of-charge recursion. Not clamped."""
    return soc + g.delta_hours * (p.rho_c * np.maximum(u_b, 0.0) + np.minimum(u_b, 0.0) / p.rho_d)


def pm10_stability(air: AirParams, g: TimeGrid, u_v, n):
    """Euler amplification margin Δ(δ + k u_v + βn); above 1 the step is unstable."""
    return g.delta_hours * (air.delta_dep + air.exchange_per_kw * u_v + air.beta * n)


def step_pm10(air: AirParams, g: TimeGrid, c, u_v, w_next, check: bool = True):
    """Explicit Euler step of the PM10 balance, floored at zero.

    ``w_next`` is anything exposing ``n`` and ``c_o`` (a NoiseVector or
    arrays of them).
    """
    dt = g.delta_hours
    n = w_next.n
    if check and np.any(pm10_stability(air, g, u_v, n) > 1.0):
        warnings.warn("PM10 Euler step outside its stability region", StabilityWarning, stacklevel=2)
    exchange = air.exchange_per_kw * u_v + air.beta * n
    c_next = c - dt * air.delta_dep * c + dt * air.alpha * n**2 + dt * exchange * (w_next.c_o - c)
    return np.maximum(c_next, 0.0)


def dynamics(m: StationModel, t: int, x: State, u: Control, w_next: NoiseVector) -> State:
    return State(
        float(step_soc(m.battery, m.time, x.soc, u.u_b)),
        float(step_pm10(m.air, m.time, x.pm10, u.u_v, w_next)),
    )


def import_power(u: Control, w_next: NoiseVector) -> float:
    """Grid draw d + u_v + u_b - b; negative values are wasted braking surplus."""
    return w_next.d + u.u_v + u.u_b - w_next.b


def stage_cost(
    e: EconomicParams, t: int, x: State, u: Control, w_next: NoiseVector, x_next: State
) -> float:
    r = import_power(u, w_next)
    return e.tariff[t] * max(r, 0.0) + e.lambda_comfort * x_next.pm10


def admissible(m: StationModel, x: State, u: Control) -> bool:
    b = m.battery
    if u.u_v not in m.ventilation.powers:
        return False
    if not (b.power_min <= u.u_b <= b.power_max):
        return False
    if not (b.soc_min - SOC_TOL <= x.soc <= b.soc_max + SOC_TOL):
        return False
    s_next = step_soc(b, m.time, x.soc, u.u_b)
    return bool(b.soc_min - SOC_TOL <= s_next <= b.soc_max + SOC_TOL)


# -- policies ---------------------------------------------------------------


@runtime_checkable
class Policy(Protocol):
    """State strategy: the decision at t sees only (t, x_t, w_t)."""

    def decide(self, t: int, x: State, w: NoiseVector) -> Control: ...


class ReferencePolicy:
    """Current practice: full ventilation, no battery, braking not recovered."""

    recovers_braking = False

    def __init__(self, m: StationModel):
        self.u_v = m.ventilation.power_high

    def decide(self, t, x, w):
        return Control(0.0, self.u_v)

    def decide_batch(self, t, soc, pm10, w, ids=None):
        size = np.shape(soc)
        return np.zeros(size), np.full(size, self.u_v)

    def fresh(self):
        return self


def reference_policy(m: StationModel) -> ReferencePolicy:
    return ReferencePolicy(m)


def soc_percent(b: BatteryParams, soc):
    return 100.0 * soc / b.capacity


def two_tier_tariff(
    g: TimeGrid,
    off_peak: float = 0.07,
    peak: float = 0.12,
    peak_windows: tuple[tuple[float, float], ...] = ((17.5, 19.5),),
) -> tuple[float, ...]:
    """Per-step prices p_1..p_T (€/kW per step) from €/kWh tiers.

    A step is billed at the peak rate when its midpoint falls inside a
    window given in clock hours.
    """
    mid = (np.arange(g.T) + 0.5) * g.delta_hours
    mid = np.mod(mid, 24.0)
    rate = np.full(g.T, off_peak)
    for lo, hi in peak_windows:
        rate[(mid >= lo) & (mid < hi)] = peak
    return tuple(float(r * g.delta_hours) for r in rate)


__all__ = [
    "AirParams",
    "BatteryParams",
    "Control",
    "EconomicParams",
    "NoiseVector",
    "Policy",
    "ReferencePolicy",
    "StabilityWarning",
    "State",
    "StationModel",
    "TimeGrid",
    "VentilationModes",
    "admissible",
    "airflow",
    "dynamics",
    "import_power",
    "pm10_stability",
    "reference_policy",
    "stage_cost",
    "step_pm10",
    "step_soc",
    "two_tier_tariff",
    "zero_final_cost",
]
