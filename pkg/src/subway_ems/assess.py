"""Closed-loop simulation and out-of-sample Monte Carlo assessment."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SOC_TOL, Control, NoiseVector, State, StationModel, admissible, reference_policy, step_pm10, step_soc
from .scenarios import ASSESSMENT, Scenario, ScenarioSet, require_role
from .sdp import NoiseBatch

GAP_GUARD = 1e-6  # € floor on the relative-gap denominator


class InadmissibleControl(ValueError):
    pass


def default_x0(m: StationModel, scenarios) -> State:
    """Mid-range SOC, outdoor PM10 at t = 0."""
    b = m.battery
    return State(0.5 * (b.soc_min + b.soc_max), float(scenarios.profiles.c_o[0]))


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    soc: np.ndarray  # (T+1,)
    pm10: np.ndarray  # (T+1,)
    u_b: np.ndarray  # (T,)
    u_v: np.ndarray
    imports: np.ndarray  # d + u_v + u_b - b at t+1, negative = wasted surplus
    stage_costs: np.ndarray
    prices: np.ndarray
    final_cost: float
    delta_hours: float
    load: np.ndarray  # d + u_v, station consumption excluding the battery

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_costs)) + self.final_cost

    @property
    def bill(self) -> float:
        """Electricity bill (€), comfort term excluded."""
        return float(np.sum(self.prices * np.maximum(self.imports, 0.0)))

    @property
    def energy_kwh(self) -> float:
        """Energy drawn from the grid."""
        return float(np.sum(np.maximum(self.imports, 0.0)) * self.delta_hours)

    @property
    def load_kwh(self) -> float:
        return float(np.sum(self.load) * self.delta_hours)

    @property
    def wasted_kwh(self) -> float:
        return float(np.sum(np.maximum(-self.imports, 0.0)) * self.delta_hours)

    @property
    def mean_pm10(self) -> float:
        return float(np.mean(self.pm10[1:]))

    @property
    def max_pm10(self) -> float:
        return float(np.max(self.pm10[1:]))

    @property
    def state_trajectory(self) -> list[State]:
        return [State(float(s), float(c)) for s, c in zip(self.soc, self.pm10)]


def _recovers(policy) -> bool:
    return getattr(policy, "recovers_braking", True)


def simulate(m: StationModel, policy, scenario: Scenario, x0: State) -> SimulationTrace:
    """One closed-loop run; the policy sees w_t before w_{t+1} is read."""
    T = m.time.T
    if len(scenario) != T + 1:
        raise ValueError("scenario length must be T+1")
    if not (m.battery.soc_min - SOC_TOL <= x0.soc <= m.battery.soc_max + SOC_TOL) or x0.pm10 < 0:
        raise ValueError("x0 is not admissible")
    recovers = _recovers(policy)
    e = m.economics
    soc, pm10 = np.empty(T + 1), np.empty(T + 1)
    ub, uv, imp, cost, load = (np.empty(T) for _ in range(5))
    soc[0], pm10[0] = x0.soc, x0.pm10
    x = x0
    w = scenario.noise(0)
    for t in range(T):
        u = policy.decide(t, x, w)
        if not admissible(m, x, u):
            raise InadmissibleControl(f"step {t}: control {u} is not admissible at {x}")
        w_next = scenario.noise(t + 1)
        s1 = float(step_soc(m.battery, m.time, x.soc, u.u_b))
        c1 = float(step_pm10(m.air, m.time, x.pm10, u.u_v, w_next))
        r = w_next.d + u.u_v + u.u_b - (w_next.b if recovers else 0.0)
        ub[t], uv[t], imp[t], load[t] = u.u_b, u.u_v, r, w_next.d + u.u_v
        cost[t] = e.tariff[t] * max(r, 0.0) + e.lambda_comfort * c1
        x, w = State(s1, c1), w_next
        soc[t + 1], pm10[t + 1] = s1, c1
    return SimulationTrace(
        soc, pm10, ub, uv, imp, cost, np.asarray(e.tariff), float(m.final_cost(x)), m.time.delta_hours, load
    )


def _decide_batch(policy, t, soc, pm10, noise, ids):
    if hasattr(policy, "decide_batch"):
        try:
            return policy.decide_batch(t, soc, pm10, noise, ids)
        except TypeError:
            return policy.decide_batch(t, soc, pm10, noise)
    ub, uv = np.empty(len(soc)), np.empty(len(soc))
    for i in range(len(soc)):
        w = NoiseVector(float(noise.d), float(noise.b[i]), float(noise.n), float(noise.c_o))
        u = policy.decide(t, State(float(soc[i]), float(pm10[i])), w)
        ub[i], uv[i] = u.u_b, u.u_v
    return ub, uv


def simulate_batch(m: StationModel, policy, scenarios: ScenarioSet, x0: State, ids=None) -> list[SimulationTrace]:
    """Lock-step closed loop over many scenarios; same arithmetic as ``simulate``."""
    ids = np.arange(scenarios.count) if ids is None else np.asarray(ids)
    T, B = m.time.T, len(ids)
    p, e, bat = scenarios.profiles, m.economics, m.battery
    b = scenarios.b[ids] if _recovers(policy) else np.zeros((B, T + 1))
    soc, pm10 = np.empty((B, T + 1)), np.empty((B, T + 1))
    ub, uv, imp, cost, load = (np.empty((B, T)) for _ in range(5))
    soc[:, 0], pm10[:, 0] = x0.soc, x0.pm10
    modes = m.ventilation.powers
    for t in range(T):
        noise = NoiseBatch(p.d[t], scenarios.b[ids, t], p.n[t], p.c_o[t])
        u_b, u_v = _decide_batch(policy, t, soc[:, t], pm10[:, t], noise, ids)
        u_b = np.broadcast_to(np.asarray(u_b, dtype=float), (B,))
        u_v = np.broadcast_to(np.asarray(u_v, dtype=float), (B,))
        s1 = step_soc(bat, m.time, soc[:, t], u_b)
        bad = (
            (u_b < bat.power_min)
            | (u_b > bat.power_max)
            | ~np.isin(u_v, modes)
            | (s1 < bat.soc_min - SOC_TOL)
            | (s1 > bat.soc_max + SOC_TOL)
        )
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise InadmissibleControl(
                f"step {t}: control {Control(float(u_b[i]), float(u_v[i]))} is not admissible "
                f"in scenario {int(ids[i])}"
            )
        w_next = NoiseBatch(p.d[t + 1], b[:, t + 1], p.n[t + 1], p.c_o[t + 1])
        c1 = step_pm10(m.air, m.time, pm10[:, t], u_v, w_next)
        r = p.d[t + 1] + u_v + u_b - b[:, t + 1]
        ub[:, t], uv[:, t], imp[:, t], load[:, t] = u_b, u_v, r, p.d[t + 1] + u_v
        cost[:, t] = e.tariff[t] * np.maximum(r, 0.0) + e.lambda_comfort * c1
        soc[:, t + 1], pm10[:, t + 1] = s1, c1
    prices = np.asarray(e.tariff)
    return [
        SimulationTrace(
            soc[i], pm10[i], ub[i], uv[i], imp[i], cost[i], prices,
            float(m.final_cost(State(float(soc[i, T]), float(pm10[i, T])))), m.time.delta_hours, load[i],
        )
        for i in range(B)
    ]


METRICS = ("cost", "bill", "energy", "load", "pm10_mean", "pm10_max", "wasted")


def _metrics(traces: list[SimulationTrace]) -> dict[str, np.ndarray]:
    return {
        "cost": np.array([tr.total_cost for tr in traces]),
        "bill": np.array([tr.bill for tr in traces]),
        "energy": np.array([tr.energy_kwh for tr in traces]),
        "load": np.array([tr.load_kwh for tr in traces]),
        "pm10_mean": np.array([tr.mean_pm10 for tr in traces]),
        "pm10_max": np.array([tr.max_pm10 for tr in traces]),
        "wasted": np.array([tr.wasted_kwh for tr in traces]),
    }


def run_policy(m, policy, scenarios: ScenarioSet, x0: State, threads: int = 1, chunk: int | None = None):
    """Per-scenario metric vectors, in scenario order regardless of ``threads``."""
    ids = np.arange(scenarios.count)
    if threads <= 1:
        return _metrics(simulate_batch(m, policy, scenarios, x0, ids))
    chunk = chunk or -(-len(ids) // threads)
    parts = [ids[i : i + chunk] for i in range(0, len(ids), chunk)]

    def work(part):
        return simulate_batch(m, policy.fresh() if hasattr(policy, "fresh") else policy, scenarios, x0, part)

    with ThreadPoolExecutor(threads) as ex:
        traces = [tr for res in ex.map(work, parts) for tr in res]
    return _metrics(traces)


@dataclass(frozen=True, eq=False)
class AssessmentReport:
    name: str
    scenario_digest: str
    metrics: dict  # metric -> per-scenario array
    reference: dict  # same metrics for the reference policy
    seconds: float = 0.0

    @property
    def count(self) -> int:
        return len(self.metrics["cost"])

    def savings(self, metric: str) -> np.ndarray:
        """Policy minus reference on each scenario; negative numbers are savings."""
        return self.metrics[metric] - self.reference[metric]

    def summary(self) -> dict:
        out = {"policy": self.name, "scenarios": self.count, "scenario_digest": self.scenario_digest}
        for k in ("bill", "cost", "energy", "load"):
            sv = self.savings(k)
            out[f"{k}_savings_mean"] = float(np.mean(sv))
            out[f"{k}_savings_std"] = float(np.std(sv))
        for k in METRICS:
            out[f"{k}_mean"] = float(np.mean(self.metrics[k]))
            out[f"{k}_std"] = float(np.std(self.metrics[k]))
        out["reference_pm10_mean"] = float(np.mean(self.reference["pm10_mean"]))
        out["seconds"] = self.seconds
        return out

    def write(self, directory, stem: str | None = None) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        csv_path = d / f"{stem}_scenarios.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "cost", "bill", "bill_savings", "energy", "energy_savings", "load_savings", "pm10_mean", "pm10_max", "wasted"])
            for i in range(self.count):
                w.writerow([
                    i,
                    repr(float(self.metrics["cost"][i])),
                    repr(float(self.metrics["bill"][i])),
                    repr(float(self.savings("bill")[i])),
                    repr(float(self.metrics["energy"][i])),
                    repr(float(self.savings("energy")[i])),
                    repr(float(self.savings("load")[i])),
                    repr(float(self.metrics["pm10_mean"][i])),
                    repr(float(self.metrics["pm10_max"][i])),
                    repr(float(self.metrics["wasted"][i])),
                ])
        json_path = d / f"{stem}_summary.json"
        json_path.write_text(json.dumps(self.summary(), indent=2))
        return csv_path, json_path

    def save(self, path) -> None:
        """``<path>.npy`` metric matrix plus a ``<path>.json`` header."""
        path = Path(path)
        keys = sorted(self.metrics)
        np.save(path.with_suffix(".npy"), np.vstack([self.metrics[k] for k in keys] + [self.reference[k] for k in keys]))
        header = {"name": self.name, "digest": self.scenario_digest, "metrics": keys}
        path.with_suffix(".json").write_text(json.dumps(header))

    @classmethod
    def load(cls, path) -> "AssessmentReport":
        path = Path(path)
        h = json.loads(path.with_suffix(".json").read_text())
        arr = np.load(path.with_suffix(".npy"))
        k = len(h["metrics"])
        met = {name: arr[i] for i, name in enumerate(h["metrics"])}
        ref = {name: arr[k + i] for i, name in enumerate(h["metrics"])}
        return cls(h["name"], h["digest"], met, ref)


def monte_carlo(
    m: StationModel,
    policy,
    scenarios: ScenarioSet,
    x0: State | None = None,
    reference=None,
    name: str = "policy",
    threads: int = 1,
    reference_metrics: dict | None = None,
) -> AssessmentReport:
    """Out-of-sample assessment on a sealed assessment set."""
    require_role(scenarios, ASSESSMENT, "monte_carlo")
    x0 = x0 or default_x0(m, scenarios)
    t = time.perf_counter()
    met = run_policy(m, policy, scenarios, x0, threads)
    seconds = time.perf_counter() - t
    if reference_metrics is None:
        reference_metrics = run_policy(m, reference or reference_policy(m), scenarios, x0, threads)
    return AssessmentReport(name, scenarios.digest(), met, reference_metrics, seconds)


@dataclass(frozen=True, eq=False)
class Comparison:
    gap: np.ndarray
    wins: int  # A strictly cheaper
    ties: int
    losses: int
    edges: np.ndarray
    counts: np.ndarray

    def summary(self) -> dict:
        return {
            "wins": self.wins,
            "ties": self.ties,
            "losses": self.losses,
            "gap_mean": float(np.mean(self.gap)),
            "gap_std": float(np.std(self.gap)),
        }

    def write_histogram(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["left", "right", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return path


def compare(a: AssessmentReport, b: AssessmentReport, metric: str = "cost", bins: int = 30, tie_tol: float = 0.0) -> Comparison:
    """Per-scenario relative gap (A - B)/|B| with win/tie/loss counts for A."""
    if a.scenario_digest != b.scenario_digest or a.count != b.count:
        raise ValueError("reports come from different scenario sets")
    ca, cb = a.metrics[metric], b.metrics[metric]
    gap = (ca - cb) / np.maximum(np.abs(cb), GAP_GUARD)
    diff = ca - cb
    tie = np.abs(diff) <= tie_tol
    wins = int(np.count_nonzero((diff < 0) & ~tie))
    ties = int(np.count_nonzero(tie))
    lo, hi = float(gap.min()), float(gap.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(gap, bins=bins, range=(lo, hi))
    return Comparison(gap, wins, ties, len(gap) - wins - ties, edges, counts)


def timing_report(policies: dict, m: StationModel, scenarios: ScenarioSet, x0: State | None = None,
                  steps=None, offline_seconds: dict | None = None) -> dict:
    """Offline build times (s) and per-decision online latency (ms) at sampled steps."""
    x0 = x0 or default_x0(m, scenarios)
    steps = list(range(0, m.time.T, max(1, m.time.T // 24))) if steps is None else list(steps)
    offline_seconds = offline_seconds or {}
    out = {}
    for name, policy in policies.items():
        pol = policy.fresh() if hasattr(policy, "fresh") else policy
        lat = []
        sc = scenarios.scenario(0)
        for t in steps:
            w = sc.noise(t)
            t1 = time.perf_counter()
            pol.decide(t, x0, w)
            lat.append(1e3 * (time.perf_counter() - t1))
        out[name] = {
            "offline_s": float(offline_seconds.get(name, 0.0)),
            "online_mean_ms": float(np.mean(lat)),
            "online_max_ms": float(np.max(lat)),
            "decisions": len(lat),
        }
    return out
