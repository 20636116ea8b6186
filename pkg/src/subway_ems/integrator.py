"""Continuous-time check of the Euler discretization.

Controls and exogenous signals are piecewise constant on the decision
grid; on interval [t_k, t_{k+1}) they take the values applied in the
step k -> k+1 (control u_k, noise w_{k+1}). The adaptive integrator
restarts at every grid point, so no step straddles a discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np

from .model import State, StationModel, step_pm10, step_soc

EPS_DENOM = 1e-9

# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ContinuousInputs:
    u_b: np.ndarray  # (T,) kW on [t_k, t_{k+1})
    u_v: np.ndarray  # (T,)
    d: np.ndarray  # (T+1,) noise samples; interval k uses index k+1
    b: np.ndarray
    n: np.ndarray
    c_o: np.ndarray

    def __post_init__(self):
        T = len(self.u_b)
        if len(self.u_v) != T or any(len(a) != T + 1 for a in (self.d, self.b, self.n, self.c_o)):
            raise ValueError("schedules must cover the whole horizon")

    @property
    def T(self) -> int:
        return len(self.u_b)

    @classmethod
    def from_run(cls, u_b, u_v, scenario) -> "ContinuousInputs":
        p = scenario.profiles
        return cls(np.asarray(u_b, float), np.asarray(u_v, float), p.d, np.asarray(scenario.b, float), p.n, p.c_o)


def _rhs(m: StationModel, ub, uv, n, co):
    bat, air = m.battery, m.air
    ds = bat.rho_c * max(ub, 0.0) + min(ub, 0.0) / bat.rho_d
    k = air.exchange_per_kw * uv + air.beta * n
    src = air.alpha * n * n

    def f(x):
        return np.array([ds, -air.delta_dep * x[1] + src + k * (co - x[1])])

    return f


def integrate_euler(m: StationModel, inp: ContinuousInputs, x0: State, substeps: int = 1, stride: int = 1) -> np.ndarray:
    """Explicit Euler states on the decision grid, shape (T/stride + 1, 2).

    ``substeps`` splits each interval for convergence studies; ``stride``
    coarsens the step to ``stride`` intervals, holding the inputs of the
    first interval of each coarse step. With both equal to 1 this is
    exactly iterating the model dynamics.
    """
    if inp.T != m.time.T:
        raise ValueError("inputs and model disagree on T")
    if substeps < 1 or stride < 1 or inp.T % stride:
        raise ValueError("substeps >= 1 and stride dividing T required")
    out = np.empty((inp.T // stride + 1, 2))
    s, c = x0.soc, x0.pm10
    out[0] = s, c
    g = m.time
    if stride > 1 or substeps > 1:
        h = g.delta_hours * stride / substeps
        g = replace(g, delta_hours=h, horizon_steps=1, day_length=h)
    for j in range(inp.T // stride):
        k = j * stride
        w = SimpleNamespace(n=inp.n[k + 1], c_o=inp.c_o[k + 1])
        for _ in range(substeps):
            s = float(step_soc(m.battery, g, s, inp.u_b[k]))
            c = float(step_pm10(m.air, g, c, inp.u_v[k], w))
        out[j + 1] = s, c
    return out



def _dp45_interval(f, x, t_end, h, rtol, atol, stats):
    t = 0.0
    h_min = 1e-14 * max(t_end, 1.0)
    while t < t_end:
        h = min(h, t_end - t)
        if h < h_min:
            raise StepSizeUnderflow(f"step size {h} below {h_min}")
        k = [f(x)]
        for i in range(1, 7):
            k.append(f(x + h * sum(a * kk for a, kk in zip(_A[i], k))))
        K = np.array(k)
        x5 = x + h * (_B5 @ K)
        x4 = x + h * (_B4 @ K)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        err = float(np.max(np.abs(x5 - x4) / scale))
        stats["evals"] += 6
        if err <= 1.0:
            t += h
            x = x5
            stats["accepted"] += 1
            factor = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
        else:
            stats["rejected"] += 1
            factor = max(0.2, 0.9 * err ** -0.2)
        h *= factor
    return x, h


def integrate_adaptive(
    m: StationModel, inp: ContinuousInputs, x0: State, rtol: float = 1e-8, atol: float = 1e-10
) -> tuple[np.ndarray, dict]:
    """Dormand-Prince 5(4) with proportional step control, sampled on the grid."""
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if inp.T != m.time.T:
        raise ValueError("inputs and model disagree on T")
    dt = m.time.delta_hours
    x = np.array([x0.soc, x0.pm10], dtype=float)
    out = np.empty((inp.T + 1, 2))
    out[0] = x
    stats = {"accepted": 0, "rejected": 0, "evals": 0}
    h = dt
    for k in range(inp.T):
        f = _rhs(m, inp.u_b[k], inp.u_v[k], inp.n[k + 1], inp.c_o[k + 1])
        x, h = _dp45_interval(f, x, dt, h, rtol, atol, stats)
        out[k + 1] = x
        h = min(h, dt)
    return out, stats


@dataclass(frozen=True)
class IntegrationReport:
    mean_rel_error_pct: tuple  # per component (soc, pm10)
    std_rel_error_pct: tuple
    max_abs_error: tuple
    points: int
    steps: dict

    def to_dict(self) -> dict:
        return {
            "components": ["soc", "pm10"],
            "mean_rel_error_pct": list(self.mean_rel_error_pct),
            "std_rel_error_pct": list(self.std_rel_error_pct),
            "max_abs_error": list(self.max_abs_error),
            "points": self.points,
            "steps": self.steps,
        }


def compare(euler: np.ndarray, reference: np.ndarray, steps: dict | None = None) -> IntegrationReport:
    """Relative errors of ``euler`` against ``reference`` sampled on the same points."""
    euler, reference = np.asarray(euler, float), np.asarray(reference, float)
    if euler.shape != reference.shape:
        raise ValueError(f"trajectory shapes differ: {euler.shape} vs {reference.shape}")
    err = np.abs(euler - reference)
    rel = 100.0 * err / np.maximum(np.abs(reference), EPS_DENOM)
    return IntegrationReport(
        tuple(float(v) for v in rel.mean(axis=0)),
        tuple(float(v) for v in rel.std(axis=0)),
        tuple(float(v) for v in err.max(axis=0)),
        int(euler.shape[0]),
        dict(steps or {}),
    )


def validate_discretization(m: StationModel, inp: ContinuousInputs, x0: State, stride: int = 1, rtol=1e-8, atol=1e-10):
    """Euler at ``stride`` grid intervals per step against the adaptive solution."""
    ref, stats = integrate_adaptive(m, inp, x0, rtol, atol)
    eu = integrate_euler(m, inp, x0, stride=stride)
    return compare(eu, ref[::stride], {"euler": inp.T // stride, **stats})
