import numpy as np
import pytest
from scipy import sparse

from subway_ems.model import Control, NoiseVector, State, dynamics
from subway_ems.mpc import (
    BlendedForecaster,
    ForecastPath,
    HorizonSolver,
    LogAR1Forecaster,
    MilpArtifact,
    MpcConfig,
    PerfectForecaster,
    build_milp,
    export_mps,
    milp_point,
    mpc_controller,
    mps_text,
    path_cost,
    read_mps,
    solve_deterministic,
    solve_milp,
)
from subway_ems.scenarios import ASSESSMENT, DeterministicProfiles, fit_log_ar1, generate_log_ar1
from subway_ems.assess import run_policy
from subway_ems.sdp import ControlMesh, StateGrid
from tests.conftest import tiny_model
from tests.oracles import lattice_model, open_loop_optimum

LATTICE_GRID = StateGrid(np.array([30.0, 60.0, 90.0]), np.linspace(0.0, 400.0, 3))
LATTICE_MESH = ControlMesh(np.array([-30.0, 0.0, 30.0]), (10.0, 30.0))
W3 = [NoiseVector(20.0, b, 10.0, 30.0) for b in (0.0, 45.0, 10.0)]


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(n_mpc=5, horizon=3)
    with pytest.raises(ValueError):
        MpcConfig(solver="cplex")


@pytest.mark.parametrize("soc", [30.0, 60.0, 90.0])
@pytest.mark.parametrize("pm10", [0.0, 50.0, 300.0])
def test_matches_exhaustive_enumeration(soc, pm10):
    m = lattice_model(lam=0.01)
    x0 = State(soc, pm10)
    plan = solve_deterministic(m, 0, x0, W3, 3, LATTICE_GRID, LATTICE_MESH)
    best, _ = open_loop_optimum(m, x0, LATTICE_MESH.controls(), W3)
    assert path_cost(m, 0, x0, plan, W3)[0] == pytest.approx(best, abs=1e-9)


def test_free_surplus_ties_to_idle():
    m = lattice_model(T=1, lam=0.0)
    plan = solve_deterministic(m, 0, State(60.0, 10.0), [NoiseVector(20.0, 500.0, 10.0, 30.0)], 1, LATTICE_GRID, LATTICE_MESH)
    assert plan == [Control(0.0, 10.0)]


def test_start_outside_bounds_is_clamped():
    m = lattice_model()
    with pytest.warns(RuntimeWarning):
        plan = solve_deterministic(m, 0, State(95.0, 10.0), W3, 3, LATTICE_GRID, LATTICE_MESH)
    assert len(plan) == 3


def test_horizon_validation():
    m = lattice_model()
    with pytest.raises(ValueError):
        HorizonSolver(m, LATTICE_GRID, LATTICE_MESH, 2, [1.0, 1.0], [0, 0], [0, 0])
    with pytest.raises(ValueError):
        build_milp(m, 0, State(60, 10), W3, 0)


@pytest.fixture(scope="module")
def short_day():
    """One-hour station day with a fitted log-AR(1) braking model."""
    T = 30
    m = tiny_model(T=T, lam=2e-3, alpha=0.6, beta=0.007)
    prof = DeterministicProfiles.constant(T, 60.0, 15.0, 25.0)
    opt = generate_log_ar1(0.6, 1.5, 0.8, prof, 200, seed=1)
    ass = generate_log_ar1(0.6, 1.5, 0.8, prof, 200, seed=2, role=ASSESSMENT)
    grid = StateGrid.default(m, 11, 11, pm10_top=200.0)
    mesh = ControlMesh.build(m.battery, m.ventilation, 11)
    return m, fit_log_ar1(opt), ass, grid, mesh


def test_perfect_information_closed_loop_equals_open_loop(short_day):
    m, _, ass, grid, mesh = short_day
    T = m.time.T
    x0 = State(60.0, 25.0)
    for i in range(5):
        sc = ass.scenario(i)
        w = ForecastPath(sc.profiles.d[1:], sc.b[1:], sc.profiles.n[1:], sc.profiles.c_o[1:])
        plan = solve_deterministic(m, 0, x0, w, T, grid, mesh)
        dp_cost, _ = path_cost(m, 0, x0, plan, w)
        ctl = mpc_controller(m, MpcConfig(1, T), PerfectForecaster(ass.subset([i])), grid, mesh)
        loop = run_policy(m, ctl, ass.subset([i]), x0)
        assert loop["cost"][0] == pytest.approx(dp_cost, abs=1e-9)


def test_full_horizon_plan_is_replayed(short_day):
    m, _, ass, grid, mesh = short_day
    T = m.time.T
    ctl = mpc_controller(m, MpcConfig(T, T), PerfectForecaster(ass), grid, mesh)
    x0 = State(60.0, 25.0)
    sc = ass.scenario(3)
    w = ForecastPath(sc.profiles.d[1:], sc.b[1:], sc.profiles.n[1:], sc.profiles.c_o[1:])
    plan = solve_deterministic(m, 0, x0, w, T, grid, mesh)
    x = x0
    for t in range(T):
        u = ctl.decide(t, x, sc.noise(t), scenario_id=3)
        assert u == plan[t]
        x = dynamics(m, t, x, u, sc.noise(t + 1))
    assert ctl.reoptimizations == 1


@pytest.mark.parametrize("n_mpc", [1, 4, 7])
def test_reoptimization_counter(short_day, n_mpc):
    m, model, ass, grid, mesh = short_day
    ctl = mpc_controller(m, MpcConfig(n_mpc, 10), model, grid, mesh)
    run_policy(m, ctl, ass.subset([0, 1]), State(60.0, 25.0))
    assert ctl.reoptimizations == -(-m.time.T // n_mpc)


def test_forecast_error_sweep(short_day):
    m, model, ass, grid, mesh = short_day
    x0 = State(60.0, 25.0)
    costs = []
    for err in (1.0, 0.5, 0.0):
        ctl = mpc_controller(m, MpcConfig(1, 10), BlendedForecaster(model, ass, err), grid, mesh)
        costs.append(run_policy(m, ctl, ass, x0)["cost"].mean())
    assert costs[0] >= costs[1] >= costs[2], costs


def test_perfect_forecaster_needs_ids(short_day):
    _, _, ass, _, _ = short_day
    with pytest.raises(ValueError):
        PerfectForecaster(ass)(0, 0.0, 3)


def _random_instance(station, rng):
    h = int(rng.integers(2, 7))
    t0 = int(rng.integers(0, station.time.T - h))
    d = rng.uniform(40, 120, h)
    b = rng.uniform(0, 300, h) * (rng.random(h) < 0.5)
    n = rng.uniform(0, 30, h)
    co = rng.uniform(10, 60, h)
    x0 = State(float(rng.uniform(30, 90)), float(rng.uniform(20, 250)))
    return t0, h, ForecastPath(d, b, n, co), x0


def test_dp_solution_is_milp_feasible(station, rng):
    grid = StateGrid.default(station, 21, 21)
    mesh = ControlMesh.build(station.battery, station.ventilation, 11)
    for _ in range(20):
        t0, h, path, x0 = _random_instance(station, rng)
        plan = solve_deterministic(station, t0, x0, path, h, grid, mesh)
        art = build_milp(station, t0, x0, path, h)
        x = milp_point(art, station, x0, plan, path)
        assert art.violation(x) <= 1e-6
        for s in range(h):
            v, c = x[art.var("V", s)], x[art.var("C", s)]
            assert x[art.var("A", s)] == pytest.approx(v * c, abs=1e-12)
            assert x[art.var("P", s)] * x[art.var("M", s)] == 0.0
        cost, _ = path_cost(station, t0, x0, plan, path)
        assert art.objective(x) == pytest.approx(cost, rel=1e-9)


def test_milp_optimum_not_worse_than_dp(station, rng):
    grid = StateGrid.default(station, 21, 21)
    mesh = ControlMesh.build(station.battery, station.ventilation, 11)
    for _ in range(5):
        t0, h, path, x0 = _random_instance(station, rng)
        art = build_milp(station, t0, x0, path, h)
        milp_plan = solve_milp(art, station)
        dp_plan = solve_deterministic(station, t0, x0, path, h, grid, mesh)
        milp_cost, _ = path_cost(station, t0, x0, milp_plan, path)
        dp_cost, _ = path_cost(station, t0, x0, dp_plan, path)
        assert milp_cost <= dp_cost + 1e-6


def test_mps_golden_toy_lp():
    art = MilpArtifact(
        names=["X", "Y"],
        c=np.array([1.0, 2.0]),
        A=sparse.csr_matrix(np.array([[1.0, 1.0], [1.0, -1.0]])),
        row_names=["R1", "R2"],
        row_lb=np.array([1.0, -np.inf]),
        row_ub=np.array([np.inf, 3.0]),
        col_lb=np.array([0.0, -1.0]),
        col_ub=np.array([4.0, np.inf]),
        integer=np.array([False, False]),
        c_bar=0.0,
        h=0,
        index={},
    )
    golden = (
        "NAME          TOY\n"
        "OBJSENSE\n"
        "    MIN\n"
        "ROWS\n"
        " N  COST\n"
        " G  R1\n"
        " L  R2\n"
        "COLUMNS\n"
        "    X         COST                 1\n"
        "    X         R1                   1\n"
        "    X         R2                   1\n"
        "    Y         COST                 2\n"
        "    Y         R1                   1\n"
        "    Y         R2                  -1\n"
        "RHS\n"
        "    RHS       R1                   1\n"
        "    RHS       R2                   3\n"
        "BOUNDS\n"
        " UP BND       X                    4\n"
        " LO BND       Y                   -1\n"
        "ENDATA\n"
    )
    assert mps_text(art, "TOY") == golden


def test_mps_round_trip(station, rng, tmp_path):
    t0, h, path, x0 = _random_instance(station, rng)
    art = build_milp(station, t0, x0, path, h)
    p = export_mps(art, tmp_path / "sub.mps")
    back = read_mps(p)
    assert back.sense == "MIN"
    assert len(back.columns) == len(art.names)
    assert len(back.rows) - 1 == len(art.row_names)
    assert back.integer == {f"V{s}" for s in range(h)}
    assert len(back.coeffs) == art.A.nnz + np.count_nonzero(art.c)
    for (rn, cn), v in back.coeffs.items():
        if rn != "COST":
            i, j = art.row_names.index(rn), art.names.index(cn)
            assert v == pytest.approx(art.A[i, j], rel=1e-7)
    assert "OBJSENSE\n    MIN" in p.read_text()


def test_forecaster_shapes(short_day):
    m, model, ass, _, _ = short_day
    fc = LogAR1Forecaster(model)
    assert fc(0, np.array([1.0, 50.0]), 5).shape == (2, 5)
    assert fc.profiles is model.profiles


def test_milp_controller(short_day):
    m, model, ass, grid, mesh = short_day
    ctl = mpc_controller(m, MpcConfig(10, 10, solver="external-milp"), model, grid, mesh)
    out = run_policy(m, ctl, ass.subset([0]), State(60.0, 25.0))
    assert np.isfinite(out["cost"][0]) and ctl.solves == 3
