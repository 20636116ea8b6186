"""Rolling-horizon MPC on a point forecast, plus the mixed-integer formulation.

The deterministic subproblem is solved by dynamic programming on the
same grid and control mesh as the SDP controllers, so every strategy
shares one discretization. The MILP form of the same subproblem can be
exported in fixed MPS format or solved with HiGHS through scipy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from . import _kernels
from .model import SOC_TOL, Control, NoiseVector, State, StationModel, step_pm10, step_soc
from .scenarios import LogAR1Model, ScenarioSet, forecast_braking
from .sdp import (
    PM10_TOP_DEFAULT,
    ControlMesh,
    NoiseBatch,
    StateGrid,
    argmin_controls,
    axis_weights,
    lookahead,
    expected_import_cost,
    final_values,
    one_step_geometry,
)

SOLVERS = ("deterministic-dp", "external-milp")
_ONE = np.ones(1)


@dataclass(frozen=True)
class MpcConfig:
    n_mpc: int = 1
    horizon: int = 60
    solver: str = "deterministic-dp"

    def __post_init__(self):
        if not 1 <= self.n_mpc <= self.horizon:
            raise ValueError("need 1 <= n_mpc <= horizon")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")


# -- forecast paths -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForecastPath:
    """Noise w_{t0+1..t0+h} as arrays."""

    d: np.ndarray
    b: np.ndarray
    n: np.ndarray
    c_o: np.ndarray

    @classmethod
    def of(cls, noises) -> "ForecastPath":
        arr = np.array([[w.d, w.b, w.n, w.c_o] for w in noises], dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    def __len__(self):
        return len(self.b)

    def head(self, h: int) -> "ForecastPath":
        return ForecastPath(self.d[:h], self.b[:h], self.n[:h], self.c_o[:h])

    def noise(self, s: int) -> NoiseVector:
        return NoiseVector(float(self.d[s]), float(self.b[s]), float(self.n[s]), float(self.c_o[s]))


def _as_path(forecast) -> ForecastPath:
    return forecast if isinstance(forecast, ForecastPath) else ForecastPath.of(forecast)


# -- deterministic DP subproblem -----------------------------------------------


class HorizonSolver:
    """Deterministic DP over steps t0..t0+h-1, shared by every forecast of b.

    Only the import cost depends on the braking forecast, so the pm10
    geometry is built once. Value functions are memoized by forecast
    suffix: V_s depends on b̂_s..b̂_{h-1} only, and forecasts issued from
    different b_t often agree bit for bit after a few steps.
    """

    def __init__(self, m: StationModel, grid: StateGrid, mesh: ControlMesh, t0: int, d, n, c_o):
        h = len(d)
        T = m.time.T
        if h < 1:
            raise ValueError("horizon must be >= 1")
        if t0 + h > T:
            raise ValueError(f"horizon {h} from t0={t0} passes T={T}")
        self.model, self.grid, self.mesh, self.t0, self.h = m, grid, mesh, t0, h
        self.d, self.n, self.c_o = (np.asarray(a, dtype=float) for a in (d, n, c_o))
        modes = np.asarray(mesh.modes)
        s_next = step_soc(m.battery, m.time, grid.soc[:, None], mesh.levels[None, :])
        self.feas = (s_next >= m.battery.soc_min - SOC_TOL) & (s_next <= m.battery.soc_max + SOC_TOL)
        self.ks, self.ws = axis_weights(grid.soc, s_next)
        w = SimpleNamespace(n=self.n[:, None, None], c_o=self.c_o[:, None, None])
        c_next = step_pm10(m.air, m.time, grid.pm10[None, None, :], modes[None, :, None], w, check=False)
        self.kc, self.tc = axis_weights(grid.pm10, c_next)
        self.H = m.economics.lambda_comfort * c_next
        self.base = self.d[:, None, None] + modes[None, None, :] + mesh.levels[None, :, None]
        self.price = np.asarray(m.economics.tariff[t0 : t0 + h])
        self.V_end = final_values(m, grid) if t0 + h == T else np.zeros(grid.shape[:2])
        self._memo = {}
        self._Vc = np.empty((len(modes),) + grid.shape[:2])
        self._arg = np.empty(grid.shape[:2], dtype=np.int64)
        self.stage_backups = 0

    def stage_cost(self, s: int, b):
        """Import cost at stage s; ``b`` scalar gives (J, M), ``b`` of shape (B,) gives (B, J, M)."""
        b = np.asarray(b, dtype=float)
        gap = self.base[s] - b if b.ndim == 0 else self.base[s][None] - b[:, None, None]
        return expected_import_cost(self.price[s], gap[..., None], _ONE)

    def values(self, b) -> list:
        """[None, V_1, ..., V_h] along the forecast ``b`` of length h."""
        b = np.ascontiguousarray(b, dtype=float)
        if len(b) != self.h:
            raise ValueError("forecast length differs from the horizon")
        mesh = self.mesh
        out = [None] * (self.h + 1)
        out[self.h] = self.V_end
        for s in range(self.h - 1, 0, -1):
            key = b[s:].tobytes()
            V = self._memo.get(key)
            if V is None:
                V = np.empty(self.grid.shape[:2])
                _kernels.stage_backup(
                    out[s + 1], self.kc[s], self.tc[s], self.H[s], self.stage_cost(s, b[s]),
                    self.ks, self.ws, self.feas, mesh.order_j, mesh.order_m, self._Vc, V, self._arg,
                )
                if np.any(self._arg < 0):
                    raise ValueError(f"step {self.t0 + s}: a grid node has no admissible control")
                self._memo[key] = V
                self.stage_backups += 1
            out[s] = V
        return out

    def rollout(self, soc, pm10, b_rows, steps: int):
        """Apply the DP argmin at exact states for ``steps`` steps; one forecast row per state."""
        m, grid, mesh = self.model, self.grid, self.mesh
        soc = np.atleast_1d(np.asarray(soc, dtype=float))
        p = np.atleast_1d(np.asarray(pm10, dtype=float))
        b_rows = np.atleast_2d(np.asarray(b_rows, dtype=float))
        rows, inverse = np.unique(b_rows, axis=0, return_inverse=True)
        vals = [self.values(r) for r in rows]
        inverse = np.ravel(inverse)
        UB = np.empty((len(soc), steps))
        UV = np.empty((len(soc), steps))
        for s in range(steps):
            feas, ks, ws, kc, tc, H, base = one_step_geometry(m, grid, mesh, soc, p, self.d[s], self.n[s], self.c_o[s])
            V = np.stack([vals[g][s + 1] for g in inverse])
            Q = lookahead(V, ks, ws, kc, tc, self.stage_cost(s, b_rows[:, s]) + H[:, None, :])
            ub, uv, _ = argmin_controls(mesh, Q, feas)
            UB[:, s], UV[:, s] = ub, uv
            soc = step_soc(m.battery, m.time, soc, ub)
            p = step_pm10(m.air, m.time, p, uv, SimpleNamespace(n=self.n[s], c_o=self.c_o[s]), check=False)
        return UB, UV


def _clamp_start(m: StationModel, grid: StateGrid, x0: State) -> State:
    b = m.battery
    soc = min(max(x0.soc, b.soc_min), b.soc_max)
    if soc != x0.soc:
        warnings.warn(f"start SOC {x0.soc} outside bounds, clamped to {soc}", RuntimeWarning, stacklevel=3)
    if x0.pm10 > grid.pm10[-1]:
        warnings.warn("start PM10 above the grid top; continuation values are clamped", RuntimeWarning, stacklevel=3)
    return State(soc, x0.pm10)


def solve_deterministic(
    m: StationModel,
    t0: int,
    x0: State,
    forecast,
    h: int,
    grid: StateGrid | None = None,
    mesh: ControlMesh | None = None,
) -> list[Control]:
    """Open-loop optimal controls for steps t0..t0+h-1 along a forecast of w_{t0+1..t0+h}."""
    path = _as_path(forecast)
    if len(path) < h:
        raise ValueError("forecast shorter than the horizon")
    grid = grid or StateGrid.default(m)
    mesh = mesh or ControlMesh.build(m.battery, m.ventilation)
    x0 = _clamp_start(m, grid, x0)
    path = path.head(h)
    solver = HorizonSolver(m, grid, mesh, t0, path.d, path.n, path.c_o)
    ub, uv = solver.rollout(x0.soc, x0.pm10, path.b[None, :], h)
    return [Control(float(a), float(b)) for a, b in zip(ub[0], uv[0])]


def path_cost(m: StationModel, t0: int, x0: State, controls, noises) -> tuple[float, list[State]]:
    """Cost of a control sequence along a noise path, with the states visited."""
    path = _as_path(noises)
    e, x = m.economics, x0
    total, states = 0.0, [x0]
    for s, u in enumerate(controls):
        w = path.noise(s)
        soc = float(step_soc(m.battery, m.time, x.soc, u.u_b))
        c = float(step_pm10(m.air, m.time, x.pm10, u.u_v, w, check=False))
        r = w.d + u.u_v + u.u_b - w.b
        total += e.tariff[t0 + s] * max(r, 0.0) + e.lambda_comfort * c
        x = State(soc, c)
        states.append(x)
    if t0 + len(controls) == m.time.T:
        total += m.final_cost(x)
    return total, states


# -- MILP formulation -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MilpArtifact:
    """min c·x  s.t.  row_lb <= A x <= row_ub,  col_lb <= x <= col_ub,  some x integer.

    Per stage s: u^{b+} (P), u^{b-} (M), ventilation indicator (V), the
    product a_s = v_s c_s (A) and import r_s (R); states soc (S) and pm10
    (C) at s = 0..h.
    """

    names: list
    c: np.ndarray
    A: sparse.csr_matrix
    row_names: list
    row_lb: np.ndarray
    row_ub: np.ndarray
    col_lb: np.ndarray
    col_ub: np.ndarray
    integer: np.ndarray
    c_bar: float
    h: int
    index: dict = field(repr=False)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint, bound or integrality violation at ``x``."""
        Ax = self.A @ x
        v = [
            np.max(self.row_lb - Ax, initial=0.0),
            np.max(Ax - self.row_ub, initial=0.0),
            np.max(self.col_lb - x, initial=0.0),
            np.max(x - self.col_ub, initial=0.0),
            np.max(np.abs(x[self.integer] - np.round(x[self.integer])), initial=0.0),
        ]
        return float(max(v))

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def var(self, kind: str, s: int) -> int:
        return self.index[kind, s]


def build_milp(
    m: StationModel, t0: int, x0: State, forecast, h: int, c_bar: float = PM10_TOP_DEFAULT
) -> MilpArtifact:
    """Mixed-integer linear form of the deterministic subproblem.

    u_v = P_low + (P_high - P_low) v with binary v; the bilinear term v·c
    in the PM10 balance is replaced by a with big-M bounds on c_bar.
    """
    if h < 1:
        raise ValueError("empty horizon: nothing to build")
    path = _as_path(forecast)
    if len(path) < h:
        raise ValueError("forecast shorter than the horizon")
    if t0 + h > m.time.T:
        raise ValueError("horizon passes the end of the day")
    b, air, dt = m.battery, m.air, m.time.delta_hours
    lo, hi = m.ventilation.powers
    dP, k = hi - lo, air.exchange_per_kw

    names, index = [], {}
    col_lb, col_ub, integer = [], [], []

    def add(kind, s, lb, ub, is_int=False):
        index[kind, s] = len(names)
        names.append(f"{kind}{s}")
        col_lb.append(lb)
        col_ub.append(ub)
        integer.append(is_int)

    for s in range(h):
        add("P", s, 0.0, b.power_max)
        add("M", s, b.power_min, 0.0)
        add("V", s, 0.0, 1.0, True)
        add("A", s, 0.0, c_bar)
        add("R", s, 0.0, np.inf)
    for s in range(h + 1):
        add("S", s, b.soc_min, b.soc_max)
        add("C", s, 0.0, c_bar)
    nv = len(names)
    cost = np.zeros(nv)
    for s in range(h):
        cost[index["R", s]] = m.economics.tariff[t0 + s]
        cost[index["C", s + 1]] += m.economics.lambda_comfort

    rows, cols, vals, row_names, rlb, rub = [], [], [], [], [], []

    def row(name, coeffs, lb, ub):
        r = len(row_names)
        row_names.append(name)
        for (kind, s), v in coeffs:
            rows.append(r)
            cols.append(index[kind, s])
            vals.append(v)
        rlb.append(lb)
        rub.append(ub)

    row("IS", [(("S", 0), 1.0)], x0.soc, x0.soc)
    row("IC", [(("C", 0), 1.0)], x0.pm10, x0.pm10)
    for s in range(h):
        n, co, d, bh = path.n[s], path.c_o[s], path.d[s], path.b[s]
        row(
            f"DS{s}",
            [(("S", s + 1), 1.0), (("S", s), -1.0), (("P", s), -dt * b.rho_c), (("M", s), -dt / b.rho_d)],
            0.0,
            0.0,
        )
        # c' = c (1 - dt(δ + k lo + βn)) - dt k dP a + dt k dP co v + dt(α n² + (k lo + βn) co)
        keep = 1.0 - dt * (air.delta_dep + k * lo + air.beta * n)
        rhs = dt * (air.alpha * n * n + (k * lo + air.beta * n) * co)
        row(
            f"DC{s}",
            [(("C", s + 1), 1.0), (("C", s), -keep), (("A", s), dt * k * dP), (("V", s), -dt * k * dP * co)],
            rhs,
            rhs,
        )
        row(f"RI{s}", [(("R", s), 1.0), (("V", s), -dP), (("P", s), -1.0), (("M", s), -1.0)], d + lo - bh, np.inf)
        row(f"BA{s}", [(("A", s), 1.0), (("V", s), -c_bar)], -np.inf, 0.0)
        row(f"BB{s}", [(("A", s), 1.0), (("C", s), -1.0)], -np.inf, 0.0)
        row(f"BC{s}", [(("A", s), 1.0), (("C", s), -1.0), (("V", s), -c_bar)], -c_bar, np.inf)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(row_names), nv))
    return MilpArtifact(
        names,
        cost,
        A,
        row_names,
        np.asarray(rlb, dtype=float),
        np.asarray(rub, dtype=float),
        np.asarray(col_lb, dtype=float),
        np.asarray(col_ub, dtype=float),
        np.asarray(integer, dtype=bool),
        float(c_bar),
        h,
        index,
    )


def milp_point(art: MilpArtifact, m: StationModel, x0: State, controls, forecast) -> np.ndarray:
    """Artifact variables for a control sequence, with a_s = v_s c_s and r_s = (import)^+."""
    path = _as_path(forecast)
    lo, hi = m.ventilation.powers
    x = np.zeros(len(art.names))
    _, states = path_cost(m, 0, x0, controls, path)
    for s, u in enumerate(controls):
        v = (u.u_v - lo) / (hi - lo)
        x[art.var("P", s)] = max(u.u_b, 0.0)
        x[art.var("M", s)] = min(u.u_b, 0.0)
        x[art.var("V", s)] = v
        x[art.var("A", s)] = v * states[s].pm10
        x[art.var("R", s)] = max(path.d[s] + u.u_v + u.u_b - path.b[s], 0.0)
    for s, st in enumerate(states):
        x[art.var("S", s)] = st.soc
        x[art.var("C", s)] = st.pm10
    return x


def solve_milp(art: MilpArtifact, m: StationModel, time_limit: float = 60.0) -> list[Control]:
    """Solve the artifact with HiGHS (scipy) and decode the controls."""
    res = milp(
        art.c,
        constraints=LinearConstraint(art.A, art.row_lb, art.row_ub),
        integrality=art.integer.astype(int),
        bounds=Bounds(art.col_lb, art.col_ub),
        options={"time_limit": time_limit},
    )
    if res.x is None:
        raise RuntimeError(f"MILP solve failed: {res.message}")
    lo, hi = m.ventilation.powers
    out = []
    for s in range(art.h):
        ub = res.x[art.var("P", s)] + res.x[art.var("M", s)]
        ub = min(max(ub, m.battery.power_min), m.battery.power_max)
        v = round(res.x[art.var("V", s)])
        out.append(Control(float(ub), hi if v else lo))
    return out


# -- MPS ----------------------------------------------------------------------


def _mps_num(x: float) -> str:
    for digits in range(12, 0, -1):
        s = format(float(x), f".{digits}g")
        if len(s) <= 12:
            return s
    raise ValueError(f"cannot fit {x} into an MPS field")


def _mps_line(f1: str, f2: str, f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    for name in (f2, f3, f5):
        if len(name) > 8:
            raise ValueError(f"MPS name {name!r} longer than 8 characters")
    line = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        line += f"   {f5:<8}  {f6:>12}"
    return line.rstrip()


def mps_text(art: MilpArtifact, name: str = "SUBWAY") -> str:
    """Fixed-format MPS text; rows are equalities or one-sided inequalities."""
    out = [f"NAME          {name}", "OBJSENSE", "    MIN", "ROWS", " N  COST"]
    kinds = []
    for r, rn in enumerate(art.row_names):
        lb, ub = art.row_lb[r], art.row_ub[r]
        if lb == ub:
            kind, rhs = "E", lb
        elif np.isinf(ub):
            kind, rhs = "G", lb
        elif np.isinf(lb):
            kind, rhs = "L", ub
        else:
            raise ValueError(f"row {rn} is ranged; not supported")
        kinds.append((kind, rhs))
        out.append(_mps_line(kind, rn))
    out.append("COLUMNS")
    A = art.A.tocsc()
    in_int = False
    for j, cn in enumerate(art.names):
        if art.integer[j] != in_int:
            tag = "'INTORG'" if art.integer[j] else "'INTEND'"
            out.append(f"    MARKER                 'MARKER'                 {tag}")
            in_int = bool(art.integer[j])
        entries = []
        if art.c[j] != 0.0:
            entries.append(("COST", art.c[j]))
        lo, hi = A.indptr[j], A.indptr[j + 1]
        entries += [(art.row_names[i], v) for i, v in zip(A.indices[lo:hi], A.data[lo:hi])]
        if not entries:
            entries.append(("COST", 0.0))
        for rn, v in entries:
            out.append(_mps_line("", cn, rn, _mps_num(v)))
    if in_int:
        out.append("    MARKER                 'MARKER'                 'INTEND'")
    out.append("RHS")
    for rn, (_, rhs) in zip(art.row_names, kinds):
        if rhs != 0.0:
            out.append(_mps_line("", "RHS", rn, _mps_num(rhs)))
    out.append("BOUNDS")
    for j, cn in enumerate(art.names):
        lb, ub = art.col_lb[j], art.col_ub[j]
        if art.integer[j] and lb == 0.0 and ub == 1.0:
            out.append(_mps_line("BV", "BND", cn))
            continue
        if lb == ub:
            out.append(_mps_line("FX", "BND", cn, _mps_num(lb)))
            continue
        if np.isinf(lb):
            out.append(_mps_line("MI", "BND", cn))
        elif lb != 0.0:
            out.append(_mps_line("LO", "BND", cn, _mps_num(lb)))
        if not np.isinf(ub):
            out.append(_mps_line("UP", "BND", cn, _mps_num(ub)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def export_mps(art: MilpArtifact, path, name: str = "SUBWAY") -> Path:
    path = Path(path)
    path.write_text(mps_text(art, name))
    return path


@dataclass
class MpsModel:
    name: str = ""
    sense: str = "MIN"
    objective: str = ""
    rows: dict = field(default_factory=dict)  # row -> type
    columns: list = field(default_factory=list)
    coeffs: dict = field(default_factory=dict)  # (row, col) -> value
    rhs: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)  # col -> [lb, ub]
    integer: set = field(default_factory=set)


def read_mps(path) -> MpsModel:
    """Parse the fixed-format subset written by ``export_mps``."""
    model = MpsModel()
    section, in_int = None, False
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw.startswith(" "):
            parts = raw.split()
            section = parts[0]
            if section == "NAME" and len(parts) > 1:
                model.name = parts[1]
            if section == "ENDATA":
                break
            continue
        f = raw.split()
        if section == "OBJSENSE":
            model.sense = f[0]
        elif section == "ROWS":
            model.rows[f[1]] = f[0]
            if f[0] == "N":
                model.objective = f[1]
        elif section == "COLUMNS":
            if len(f) >= 3 and f[1] == "'MARKER'":
                in_int = f[2] == "'INTORG'"
                continue
            col = f[0]
            if col not in model.bounds:
                model.columns.append(col)
                model.bounds[col] = [0.0, np.inf]
            if in_int:
                model.integer.add(col)
            for rn, v in zip(f[1::2], f[2::2]):
                model.coeffs[rn, col] = float(v)
        elif section == "RHS":
            for rn, v in zip(f[1::2], f[2::2]):
                model.rhs[rn] = float(v)
        elif section == "BOUNDS":
            kind, col = f[0], f[2]
            b = model.bounds.setdefault(col, [0.0, np.inf])
            val = float(f[3]) if len(f) > 3 else None
            if kind == "UP":
                b[1] = val
            elif kind == "LO":
                b[0] = val
            elif kind == "FX":
                b[0] = b[1] = val
            elif kind == "MI":
                b[0] = -np.inf
            elif kind == "PL":
                b[1] = np.inf
            elif kind == "BV":
                b[0], b[1] = 0.0, 1.0
                model.integer.add(col)
            else:
                raise ValueError(f"unsupported bound type {kind}")
        else:
            raise ValueError(f"unsupported MPS section {section}")
    return model


# -- forecasters ----------------------------------------------------------------


class LogAR1Forecaster:
    """Point forecasts of b_{t+1..t+h} from the fitted log-AR(1)."""

    def __init__(self, model: LogAR1Model, mean_correction: bool = True):
        self.model = model
        self.mean_correction = mean_correction

    @property
    def profiles(self):
        return self.model.profiles

    def __call__(self, t, b_t, h, ids=None):
        return forecast_braking(self.model, t, b_t, h, self.mean_correction)


class PerfectForecaster:
    """Reads the realized future from the scenario set; only for consistency checks."""

    def __init__(self, scenarios: ScenarioSet):
        self.scenarios = scenarios

    @property
    def profiles(self):
        return self.scenarios.profiles

    def __call__(self, t, b_t, h, ids=None):
        if ids is None:
            raise ValueError("perfect forecasts need scenario ids")
        return self.scenarios.b[np.asarray(ids)][:, t + 1 : t + 1 + h]


class BlendedForecaster:
    """(1 - e) * realized + e * log-AR(1) forecast; e = 0 is perfect information."""

    def __init__(self, model: LogAR1Model, scenarios: ScenarioSet, error: float):
        if not 0.0 <= error <= 1.0:
            raise ValueError("error weight must lie in [0, 1]")
        self.ar = LogAR1Forecaster(model)
        self.truth = PerfectForecaster(scenarios)
        self.error = error

    @property
    def profiles(self):
        return self.truth.profiles

    def __call__(self, t, b_t, h, ids=None):
        e = self.error
        return (1.0 - e) * self.truth(t, b_t, h, ids) + e * self.ar(t, b_t, h, ids)


# -- controller -------------------------------------------------------------------


class MpcController:
    """Rolling-horizon policy: re-solve every ``n_mpc`` steps, replay stored controls in between.

    Plans are memoized by the forecast path, so scenarios sharing a
    forecast share one backward recursion. Not thread-safe: use
    ``fresh()`` for each simulation thread.
    """

    def __init__(self, m: StationModel, cfg: MpcConfig, forecaster, grid: StateGrid | None = None,
                 mesh: ControlMesh | None = None):
        self.model, self.cfg, self.forecaster = m, cfg, forecaster
        self.grid = grid or StateGrid.default(m)
        self.mesh = mesh or ControlMesh.build(m.battery, m.ventilation)
        self.profiles = forecaster.profiles
        self.reoptimizations = 0
        self.solves = 0
        self.stage_backups = 0
        self.last_key = None
        self._plans = {}
        self._plan_t = None

    def fresh(self) -> "MpcController":
        return MpcController(self.model, self.cfg, self.forecaster, self.grid, self.mesh)

    def _is_reopt(self, t: int) -> bool:
        return self._plan_t is None or t >= self._plan_t + self.cfg.n_mpc or t < self._plan_t

    def decide_batch(self, t, soc, pm10, w, ids=None):
        soc = np.atleast_1d(np.asarray(soc, dtype=float))
        pm10 = np.atleast_1d(np.asarray(pm10, dtype=float))
        B = len(soc)
        key_ids = tuple(range(B)) if ids is None else tuple(int(i) for i in np.atleast_1d(ids))
        if self._is_reopt(t):
            self._reoptimize(t, soc, pm10, w, ids, key_ids)
        s = t - self._plan_t
        ub = np.array([self._plans[k][0][s] for k in key_ids])
        uv = np.array([self._plans[k][1][s] for k in key_ids])
        return ub, uv

    def _reoptimize(self, t, soc, pm10, w, ids, key_ids):
        m, p = self.model, self.profiles
        self.reoptimizations += 1
        self._plan_t = t
        self._plans = {}
        h = min(self.cfg.horizon, m.time.T - t)
        steps = min(self.cfg.n_mpc, h)
        b_hat = np.atleast_2d(self.forecaster(t, w.b, h, ids))
        if b_hat.shape[0] == 1 and len(soc) > 1:
            b_hat = np.broadcast_to(b_hat, (len(soc), h))
        sl = slice(t + 1, t + 1 + h)
        if self.cfg.solver == "deterministic-dp":
            solver = HorizonSolver(m, self.grid, self.mesh, t, p.d[sl], p.n[sl], p.c_o[sl])
            ub, uv = solver.rollout(soc, pm10, b_hat, steps)
            self.solves += len(np.unique(b_hat, axis=0))
            self.stage_backups += solver.stage_backups
        else:
            ub, uv = np.empty((len(soc), steps)), np.empty((len(soc), steps))
            for i in range(len(soc)):
                path = ForecastPath(p.d[sl], b_hat[i], p.n[sl], p.c_o[sl])
                plan = solve_milp(build_milp(m, t, State(soc[i], pm10[i]), path, h), m)[:steps]
                ub[i] = [u.u_b for u in plan]
                uv[i] = [u.u_v for u in plan]
                self.solves += 1
        for i, k in enumerate(key_ids):
            self._plans[k] = (ub[i], uv[i])
        self.last_key = (t, soc.tobytes(), pm10.tobytes(), np.asarray(w.b).tobytes())

    def decide(self, t: int, x: State, w: NoiseVector, scenario_id: int = 0) -> Control:
        ub, uv = self.decide_batch(t, x.soc, x.pm10, NoiseBatch.of(w), [scenario_id])
        return Control(float(ub[0]), float(uv[0]))


def mpc_controller(m, cfg: MpcConfig, forecaster, grid=None, mesh=None) -> MpcController:
    if isinstance(forecaster, LogAR1Model):
        forecaster = LogAR1Forecaster(forecaster)
    return MpcController(m, cfg, forecaster, grid, mesh)
