"""Grid-based stochastic dynamic programming: SDPO and SDPA.

Offline, value functions are computed by backward induction over a
(soc, pm10) grid, or over the augmented (soc, pm10, braking) grid for
SDPA. Online, a policy re-solves the one-step Bellman problem at the
current state with multilinear interpolation of the next value function.

Braking only enters the grid import term, so the successor state of
(soc, pm10) does not depend on the braking realization; the expectation
only acts on the import cost (SDPO) or on the import cost and the
braking coordinate of the successor (SDPA).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import _kernels
from .model import (
    SOC_TOL,
    BatteryParams,
    Control,
    NoiseVector,
    State,
    StationModel,
    VentilationModes,
    step_pm10,
    step_soc,
)
from .scenarios import (
    DeterministicProfiles,
    LogAR1Model,
    QuantizedMarginal,
    ResidualAtoms,
    braking_transition,
)

PM10_TOP_DEFAULT = 364.0  # µg/m³, twice the reference-case maximum


def axis_weights(axis: np.ndarray, q):
    """Bracket index and linear weight of ``q`` on ``axis``, clamping outside points."""
    q = np.clip(q, axis[0], axis[-1])
    k = np.clip(np.searchsorted(axis, q, side="right") - 1, 0, len(axis) - 2)
    theta = (q - axis[k]) / (axis[k + 1] - axis[k])
    return k.astype(np.int64), theta


def braking_axis(b_max: float, n_points: int = 21, eps_log: float = 0.1) -> np.ndarray:
    """Log-spaced braking axis from 0 to ``b_max``."""
    pts = np.exp(np.linspace(np.log(eps_log), np.log(b_max + eps_log), n_points)) - eps_log
    pts[0] = 0.0
    return pts


@dataclass(frozen=True, eq=False)
class StateGrid:
    soc: np.ndarray
    pm10: np.ndarray
    braking: np.ndarray | None = None

    def __post_init__(self):
        for name in ("soc", "pm10", "braking"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.array(a, dtype=float)
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError(f"{name} axis must be strictly increasing with >= 2 points")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def default(
        cls, m: StationModel, n_soc: int = 51, n_pm10: int = 51, pm10_top: float = PM10_TOP_DEFAULT
    ) -> "StateGrid":
        b = m.battery
        return cls(np.linspace(b.soc_min, b.soc_max, n_soc), np.linspace(0.0, pm10_top, n_pm10))

    def augmented(self, braking: np.ndarray) -> "StateGrid":
        return StateGrid(self.soc, self.pm10, braking)

    @property
    def shape(self) -> tuple[int, ...]:
        axes = [len(self.soc), len(self.pm10)]
        if self.braking is not None:
            axes.append(len(self.braking))
        return tuple(axes)

    def to_dict(self) -> dict:
        out = {"soc": self.soc.tolist(), "pm10": self.pm10.tolist()}
        if self.braking is not None:
            out["braking"] = self.braking.tolist()
        return out


@dataclass(frozen=True, eq=False)
class ControlMesh:
    """Battery levels × ventilation modes, listed in tie-break order.

    Ties go to the smaller |u_b|, then to low ventilation.
    """

    levels: np.ndarray
    modes: tuple[float, float]

    def __post_init__(self):
        lv = np.unique(np.asarray(self.levels, dtype=float))
        if 0.0 not in lv:
            raise ValueError("control mesh must contain u_b = 0")
        lv.flags.writeable = False
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "modes", tuple(float(v) for v in self.modes))
        order = sorted(
            ((j, m) for j in range(len(lv)) for m in range(len(self.modes))),
            key=lambda jm: (abs(lv[jm[0]]), jm[1], lv[jm[0]]),
        )
        object.__setattr__(self, "order_j", np.array([j for j, _ in order], dtype=np.int64))
        object.__setattr__(self, "order_m", np.array([m for _, m in order], dtype=np.int64))

    @classmethod
    def build(cls, battery: BatteryParams, vent: VentilationModes, n_levels: int = 21) -> "ControlMesh":
        levels = np.linspace(battery.power_min, battery.power_max, n_levels)
        return cls(np.append(levels, 0.0), vent.powers)

    def check(self, battery: BatteryParams) -> None:
        if self.levels.min() < battery.power_min - 1e-12 or self.levels.max() > battery.power_max + 1e-12:
            raise ValueError("mesh levels exceed battery power bounds")

    def __len__(self):
        return len(self.order_j)

    def control(self, o: int) -> Control:
        return Control(float(self.levels[self.order_j[o]]), self.modes[self.order_m[o]])

    def controls(self) -> list[Control]:
        return [self.control(o) for o in range(len(self))]

    def refined(self, factor: int) -> "ControlMesh":
        lo, hi = self.levels.min(), self.levels.max()
        n = (len(self.levels) - 1) * factor + 1
        return ControlMesh(np.append(np.linspace(lo, hi, n), self.levels), self.modes)


class Stages:
    """Transition geometry on a grid, precomputed for every step t -> t+1."""

    def __init__(self, m: StationModel, grid: StateGrid, mesh: ControlMesh, profiles: DeterministicProfiles):
        if len(profiles) != m.time.T + 1:
            raise ValueError("profiles length does not match the model horizon")
        mesh.check(m.battery)
        self.model, self.grid, self.mesh, self.profiles = m, grid, mesh, profiles
        T = m.time.T
        s_next = step_soc(m.battery, m.time, grid.soc[:, None], mesh.levels[None, :])
        self.feas = (s_next >= m.battery.soc_min - SOC_TOL) & (s_next <= m.battery.soc_max + SOC_TOL)
        self.ks, self.ws = axis_weights(grid.soc, s_next)
        modes = np.asarray(mesh.modes)
        w = SimpleNamespace(n=profiles.n[1:, None, None], c_o=profiles.c_o[1:, None, None])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.c_next = step_pm10(m.air, m.time, grid.pm10[None, None, :], modes[None, :, None], w, check=False)
        self.kc, self.tc = axis_weights(grid.pm10, self.c_next)
        self.H = m.economics.lambda_comfort * self.c_next
        self.price = np.asarray(m.economics.tariff)
        self.base = profiles.d[1 : T + 1, None, None] + modes[None, None, :] + mesh.levels[None, :, None]
        self.T = T

    def check_admissible(self, arg: np.ndarray, t: int) -> None:
        if np.any(arg < 0):
            raise ValueError(f"step {t}: a grid node has no admissible control")


def expected_import_cost(price, gap, probs):
    """price * E[(d + u_v + u_b - b)^+] with ``gap`` broadcast over atoms on the last axis."""
    return price * np.sum(np.maximum(gap, 0.0) * probs, axis=-1)


def final_values(m: StationModel, grid: StateGrid) -> np.ndarray:
    V = np.array([[m.final_cost(State(float(s), float(c))) for c in grid.pm10] for s in grid.soc], dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError("final cost must be finite on the grid")
    return V


@dataclass(frozen=True, eq=False)
class ValueTable:
    values: np.ndarray  # (T+1, Ns, Nc) or (T+1, Ns, Nc, Nw)
    grid: StateGrid
    kind: str
    model_hash: str = ""

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def save(self, path) -> None:
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.values)
        header = {"kind": self.kind, "T": self.T, "model_hash": self.model_hash, "grid": self.grid.to_dict()}
        path.with_suffix(".json").write_text(json.dumps(header))

    @classmethod
    def load(cls, path) -> "ValueTable":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        g = header["grid"]
        grid = StateGrid(np.array(g["soc"]), np.array(g["pm10"]), np.array(g["braking"]) if "braking" in g else None)
        values = np.load(path.with_suffix(".npy"))
        if values.shape != (header["T"] + 1,) + grid.shape:
            raise ValueError("value array does not match its header")
        return cls(values, grid, header["kind"], header["model_hash"])


def interpolate(table: ValueTable, t: int, x: State, w: float | None = None) -> float:
    """Multilinear interpolation of V_t, clamping coordinates to the grid box."""
    if not 0 <= t <= table.T:
        raise ValueError(f"t={t} outside 0..{table.T}")
    g = table.grid
    V = table.values[t]
    ks, ws = axis_weights(g.soc, x.soc)
    kc, tc = axis_weights(g.pm10, x.pm10)
    if g.braking is not None:
        if w is None:
            raise ValueError("augmented table needs the braking coordinate")
        kw, tw = axis_weights(g.braking, w)
        V = (1.0 - tw) * V[:, :, kw] + tw * V[:, :, kw + 1]
    a0 = (1.0 - tc) * V[ks, kc] + tc * V[ks, kc + 1]
    a1 = (1.0 - tc) * V[ks + 1, kc] + tc * V[ks + 1, kc + 1]
    return float((1.0 - ws) * a0 + ws * a1)


# -- SDPO ---------------------------------------------------------------------


def sdpo_stage(st: Stages, V_next: np.ndarray, support: np.ndarray, probs: np.ndarray, t: int):
    """Bellman minimization at step t for every grid node; returns (V_t, argmin order index)."""
    mesh = st.mesh
    Vc = np.empty((len(mesh.modes),) + V_next.shape)
    _kernels.interp_pm10(V_next, st.kc[t], st.tc[t], Vc)
    G = expected_import_cost(st.price[t], st.base[t][:, :, None] - support, probs)
    out = np.empty_like(V_next)
    arg = np.empty(V_next.shape, dtype=np.int64)
    _kernels.backup(Vc, st.ks, st.ws, st.feas, G, st.H[t], mesh.order_j, mesh.order_m, out, arg)
    st.check_admissible(arg, t)
    return out, arg


def backward_induction_sdpo(
    m: StationModel, grid: StateGrid, mesh: ControlMesh, marginals: QuantizedMarginal
) -> ValueTable:
    """V_t(x) = min_u E_{μ^of_{t+1}}[L_t + V_{t+1}(f_t)], V_T = K."""
    if marginals.T != m.time.T:
        raise ValueError("marginals must cover t = 1..T")
    st = Stages(m, grid, mesh, marginals.profiles)
    T = m.time.T
    values = np.empty((T + 1,) + grid.shape[:2])
    values[T] = final_values(m, grid)
    for t in range(T - 1, -1, -1):
        values[t], _ = sdpo_stage(st, values[t + 1], marginals.support[t + 1], marginals.probs[t + 1], t)
    return ValueTable(values, grid, "sdpo", m.config_hash())


class NoiseBatch:
    """Noise at one step for a batch of scenarios (arrays or scalars)."""

    def __init__(self, d, b, n, c_o):
        self.d, self.b, self.n, self.c_o = d, np.atleast_1d(np.asarray(b, dtype=float)), n, c_o

    @classmethod
    def of(cls, w: NoiseVector) -> "NoiseBatch":
        return cls(w.d, w.b, w.n, w.c_o)


def one_step_geometry(m: StationModel, grid: StateGrid, mesh: ControlMesh, soc, pm10, d_next, n_next, co_next):
    """Successor brackets at exact states for every mesh control.

    Returns feas (B, J), ks/ws (B, J), kc/tc (B, M), comfort cost H (B, M)
    and the pre-braking draw d + u_v + u_b as base (J, M).
    """
    soc = np.atleast_1d(np.asarray(soc, dtype=float))
    pm10 = np.atleast_1d(np.asarray(pm10, dtype=float))
    s_next = step_soc(m.battery, m.time, soc[:, None], mesh.levels[None, :])
    feas = (s_next >= m.battery.soc_min - SOC_TOL) & (s_next <= m.battery.soc_max + SOC_TOL)
    ks, ws = axis_weights(grid.soc, s_next)
    modes = np.asarray(mesh.modes)
    c_next = step_pm10(m.air, m.time, pm10[:, None], modes[None, :], SimpleNamespace(n=n_next, c_o=co_next), check=False)
    kc, tc = axis_weights(grid.pm10, c_next)
    base = d_next + modes[None, :] + mesh.levels[:, None]
    return feas, ks, ws, kc, tc, m.economics.lambda_comfort * c_next, base


def lookahead(V: np.ndarray, ks, ws, kc, tc, cost) -> np.ndarray:
    """cost + V interpolated at the successors, (B, J, M).

    Interpolates along pm10 first, then soc, and adds terms in the same
    order as the offline kernel so on-grid queries reproduce it exactly.
    """
    k3, w3 = ks[:, :, None], ws[:, :, None]
    kc3, tc3 = kc[:, None, :], tc[:, None, :]
    if V.ndim == 3:  # one value table per row
        r = np.arange(V.shape[0])[:, None, None]
        a0 = (1.0 - tc3) * V[r, k3, kc3] + tc3 * V[r, k3, kc3 + 1]
        a1 = (1.0 - tc3) * V[r, k3 + 1, kc3] + tc3 * V[r, k3 + 1, kc3 + 1]
    else:
        a0 = (1.0 - tc3) * V[k3, kc3] + tc3 * V[k3, kc3 + 1]
        a1 = (1.0 - tc3) * V[k3 + 1, kc3] + tc3 * V[k3 + 1, kc3 + 1]
    return cost + (1.0 - w3) * a0 + w3 * a1


def argmin_controls(mesh: ControlMesh, Q: np.ndarray, feas: np.ndarray):
    """Pick the first minimal control in tie-break order; Q is (B, J, M)."""
    Q = np.where(feas[:, :, None], Q, np.inf)
    ordered = Q[:, mesh.order_j, mesh.order_m]
    o = np.argmin(ordered, axis=1)
    if np.any(~np.isfinite(ordered[np.arange(len(o)), o])):
        raise ValueError("no admissible control at the current state")
    return mesh.levels[mesh.order_j[o]], np.asarray(mesh.modes)[mesh.order_m[o]], ordered.min(axis=1)


class SdpoPolicy:
    """Online SDPO: one-step lookahead under μ^on_{t+1}(w_t, ·) with V_{t+1} from the table."""

    def __init__(self, m: StationModel, table: ValueTable, mesh: ControlMesh, cond, profiles: DeterministicProfiles):
        if table.grid.braking is not None:
            raise ValueError("SDPO needs a (soc, pm10) table")
        mesh.check(m.battery)
        self.model, self.table, self.mesh, self.cond, self.profiles = m, table, mesh, cond, profiles

    def q_values(self, t, soc, pm10, b_t):
        m, p = self.model, self.profiles
        feas, ks, ws, kc, tc, H, base = one_step_geometry(
            m, self.table.grid, self.mesh, soc, pm10, p.d[t + 1], p.n[t + 1], p.c_o[t + 1]
        )
        support, probs = self.cond.atoms(t + 1, b_t)
        G = expected_import_cost(m.economics.tariff[t], base[None, :, :, None] - support[:, None, None, :], probs)
        return lookahead(self.table.values[t + 1], ks, ws, kc, tc, G + H[:, None, :]), feas

    def decide_batch(self, t, soc, pm10, w: NoiseBatch, ids=None):
        Q, feas = self.q_values(t, soc, pm10, w.b)
        u_b, u_v, _ = argmin_controls(self.mesh, Q, feas)
        return u_b, u_v

    def decide(self, t: int, x: State, w: NoiseVector) -> Control:
        u_b, u_v = self.decide_batch(t, x.soc, x.pm10, NoiseBatch.of(w))
        return Control(float(u_b[0]), float(u_v[0]))

    def fresh(self):
        return self


def sdpo_policy(m, table, mesh, cond, profiles=None) -> SdpoPolicy:
    if profiles is None:
        profiles = cond.model.profiles if hasattr(cond, "model") else cond.marginals.profiles
    return SdpoPolicy(m, table, mesh, cond, profiles)


# -- SDPA ---------------------------------------------------------------------


def _expected_over_braking(V, kw, tw, pz):
    """Σ_z π_z V(., ., w'_z) with w' bracketed by (kw, tw) along the last axis."""
    acc = np.zeros(V.shape[:2] + kw.shape[:1])
    for z in range(kw.shape[1]):
        acc = acc + pz[z] * ((1.0 - tw[:, z]) * V[:, :, kw[:, z]] + tw[:, z] * V[:, :, kw[:, z] + 1])
    return acc


def sdpa_stage(st: Stages, V_next: np.ndarray, model: LogAR1Model, z: np.ndarray, pz: np.ndarray, t: int):
    """Augmented Bellman minimization at step t; returns (V_t, argmin) of shape (Ns, Nc, Nw)."""
    g, mesh = st.grid, st.mesh
    w_next = braking_transition(g.braking[:, None], z[None, :], model.a, model.eps_log)
    kw, tw = axis_weights(g.braking, w_next)
    Ebar = _expected_over_braking(V_next, kw, tw, pz)
    G = expected_import_cost(st.price[t], st.base[t][None, :, :, None] - w_next[:, None, None, :], pz)
    out = np.empty_like(V_next)
    arg = np.empty(V_next.shape, dtype=np.int64)
    Vc = np.empty((len(mesh.modes),) + V_next.shape[:2])
    o2 = np.empty(V_next.shape[:2])
    a2 = np.empty(V_next.shape[:2], dtype=np.int64)
    for iw in range(len(g.braking)):
        _kernels.interp_pm10(np.ascontiguousarray(Ebar[:, :, iw]), st.kc[t], st.tc[t], Vc)
        _kernels.backup(Vc, st.ks, st.ws, st.feas, G[iw], st.H[t], mesh.order_j, mesh.order_m, o2, a2)
        out[:, :, iw] = o2
        arg[:, :, iw] = a2
    st.check_admissible(arg, t)
    return out, arg


def backward_induction_sdpa(
    m: StationModel, grid: StateGrid, mesh: ControlMesh, model: LogAR1Model, atoms: ResidualAtoms
) -> ValueTable:
    """Bellman recursion on (soc, pm10, b) with b' = f^w(b, z), z over the residual atoms."""
    if grid.braking is None:
        raise ValueError("SDPA needs a grid with a braking axis")
    if atoms.T != m.time.T or model.T != m.time.T:
        raise ValueError("noise model must cover t = 1..T")
    st = Stages(m, grid, mesh, model.profiles)
    T = m.time.T
    values = np.empty((T + 1,) + grid.shape)
    values[T] = final_values(m, grid)[:, :, None]
    for t in range(T - 1, -1, -1):
        values[t], _ = sdpa_stage(st, values[t + 1], model, atoms.z[t + 1], atoms.probs[t + 1], t)
    return ValueTable(values, grid, "sdpa", m.config_hash())


class SdpaPolicy:
    """Online SDPA: expectation over residual atoms of L_t + V_{t+1}(x', f^w(w_t, z))."""

    def __init__(self, m: StationModel, table: ValueTable, mesh: ControlMesh, model: LogAR1Model, atoms: ResidualAtoms):
        if table.grid.braking is None:
            raise ValueError("SDPA needs an augmented table")
        mesh.check(m.battery)
        self.model, self.table, self.mesh, self.noise, self.atoms = m, table, mesh, model, atoms

    def q_values(self, t, soc, pm10, b_t):
        m, g, mesh, nm = self.model, self.table.grid, self.mesh, self.noise
        p = nm.profiles
        feas, ks, ws, kc, tc, H, base = one_step_geometry(m, g, mesh, soc, pm10, p.d[t + 1], p.n[t + 1], p.c_o[t + 1])
        z, pz = self.atoms.z[t + 1], self.atoms.probs[t + 1]
        b_t = np.atleast_1d(np.asarray(b_t, dtype=float))
        w_next = braking_transition(b_t[:, None], z[None, :], nm.a, nm.eps_log)  # (B, Kz)
        kw, tw = axis_weights(g.braking, w_next)
        G = expected_import_cost(m.economics.tariff[t], base[None, :, :, None] - w_next[:, None, None, :], pz)
        V = self.table.values[t + 1]

        def ebar(si, ci):
            acc = 0.0
            for q in range(len(pz)):
                k, th = kw[:, q][:, None, None], tw[:, q][:, None, None]
                acc = acc + pz[q] * ((1.0 - th) * V[si, ci, k] + th * V[si, ci, k + 1])
            return acc

        k3, w3 = ks[:, :, None], ws[:, :, None]
        kc3, tc3 = kc[:, None, :], tc[:, None, :]
        a0 = (1.0 - tc3) * ebar(k3, kc3) + tc3 * ebar(k3, kc3 + 1)
        a1 = (1.0 - tc3) * ebar(k3 + 1, kc3) + tc3 * ebar(k3 + 1, kc3 + 1)
        Q = G + H[:, None, :] + (1.0 - w3) * a0 + w3 * a1
        return Q, feas

    def decide_batch(self, t, soc, pm10, w: NoiseBatch, ids=None):
        Q, feas = self.q_values(t, soc, pm10, w.b)
        u_b, u_v, _ = argmin_controls(self.mesh, Q, feas)
        return u_b, u_v

    def decide(self, t: int, x: State, w: NoiseVector) -> Control:
        u_b, u_v = self.decide_batch(t, x.soc, x.pm10, NoiseBatch.of(w))
        return Control(float(u_b[0]), float(u_v[0]))

    def fresh(self):
        return self


def sdpa_policy(m, table, mesh, model: LogAR1Model, atoms: ResidualAtoms) -> SdpaPolicy:
    return SdpaPolicy(m, table, mesh, model, atoms)
