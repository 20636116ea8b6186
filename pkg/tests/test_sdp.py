import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subway_ems.model import Control, NoiseVector, State, admissible, dynamics, stage_cost
from subway_ems.scenarios import (
    DeterministicProfiles,
    LogAR1Model,
    MarginalConditional,
    QuantizedMarginal,
    ResidualAtoms,
    braking_transition,
)
from subway_ems.sdp import (
    ControlMesh,
    StateGrid,
    Stages,
    ValueTable,
    axis_weights,
    backward_induction_sdpa,
    backward_induction_sdpo,
    braking_axis,
    interpolate,
    sdpa_policy,
    sdpo_policy,
    sdpo_stage,
)
from tests.conftest import tiny_model
from tests.oracles import ar_paths, iid_paths, lattice_model, open_loop_optimum, state, tree_optimum

T = 3
D, N, CO = 20.0, 10.0, 30.0
GRID = StateGrid(np.array([30.0, 60.0, 90.0]), np.array([0.0, 400.0]))
MESH = ControlMesh(np.array([-30.0, 0.0, 30.0]), (10.0,))
PROFILES = DeterministicProfiles.constant(T, D, N, CO)


def marginal(atoms, probs, T=T, profiles=PROFILES):
    return QuantizedMarginal(np.tile(atoms, (T + 1, 1)), np.tile(probs, (T + 1, 1)), profiles)


def ar_model(a=1.0, z=(-np.log(2.0), np.log(2.0)), pz=(0.45, 0.55), eps=1.0, T=T, profiles=PROFILES):
    model = LogAR1Model(a, np.tile(np.asarray(z), (T + 1, 1)), profiles, eps_log=eps)
    atoms = ResidualAtoms(np.tile(np.asarray(z), (T + 1, 1)), np.tile(np.asarray(pz), (T + 1, 1)))
    return model, atoms


def test_sdpo_matches_tree_oracle():
    t0 = time.perf_counter()
    m = lattice_model()
    atoms, probs = np.array([0.0, 45.0]), np.array([0.3, 0.7])
    table = backward_induction_sdpo(m, GRID, MESH, marginal(atoms, probs))
    paths, pp = iid_paths(D, atoms, probs, N, CO, T)
    controls = MESH.controls()
    for i, s in enumerate(GRID.soc):
        for j, c in enumerate(GRID.pm10):
            ref = tree_optimum(m, state(s, c), controls, paths, pp)
            assert table.values[0, i, j] == pytest.approx(ref, abs=1e-9)
    assert time.perf_counter() - t0 < 1.0


def test_sdpa_matches_tree_oracle():
    m = lattice_model()
    model, atoms = ar_model()
    axis = braking_axis(127.0, 8, eps_log=1.0)
    np.testing.assert_allclose(axis, [0, 1, 3, 7, 15, 31, 63, 127], atol=1e-12)
    table = backward_induction_sdpa(m, GRID.augmented(axis), MESH, model, atoms)

    def step(b, z):
        return braking_transition(b, z, model.a, model.eps_log)

    controls = MESH.controls()
    for ib in (0, 1, 2):
        paths, pp = ar_paths(axis[ib], step, atoms.z[1], atoms.probs[1], D, N, CO, T)
        for i, s in enumerate(GRID.soc):
            ref = tree_optimum(m, state(s, 0.0), controls, paths, pp)
            assert table.values[0, i, 0, ib] == pytest.approx(ref, abs=1e-9)


def test_terminal_values_and_surplus():
    m = lattice_model(T=1, lam=0.0)
    prof = DeterministicProfiles.constant(1, D, N, CO)
    q = QuantizedMarginal(np.full((2, 1), 500.0), np.ones((2, 1)), prof)
    table = backward_induction_sdpo(m, GRID, MESH, q)
    assert np.all(table.values == 0.0)


def test_single_atom_equals_deterministic_dp():
    m = lattice_model()
    table = backward_induction_sdpo(m, GRID, MESH, marginal(np.array([25.0]), np.array([1.0])))
    w = [NoiseVector(D, 25.0, N, CO)] * T
    for i, s in enumerate(GRID.soc):
        best, _ = open_loop_optimum(m, state(s, 400.0), MESH.controls(), w)
        assert table.values[0, i, 1] == pytest.approx(best, abs=1e-9)


def test_interpolation_contract():
    grid = StateGrid(np.array([30.0, 50.0, 90.0]), np.array([0.0, 100.0, 300.0]))
    S, C = np.meshgrid(grid.soc, grid.pm10, indexing="ij")
    lin = 2.0 * S - 0.5 * C + 3.0
    table = ValueTable(np.stack([lin, lin]), grid, "sdpo")
    assert interpolate(table, 0, State(50.0, 100.0)) == lin[1, 1]
    assert interpolate(table, 1, State(40.0, 200.0)) == pytest.approx(2 * 40 - 100 + 3)
    assert interpolate(table, 0, State(120.0, 100.0)) == interpolate(table, 0, State(90.0, 100.0))
    assert interpolate(table, 0, State(70.0, -5.0)) == interpolate(table, 0, State(70.0, 0.0))
    with pytest.raises(ValueError):
        interpolate(table, 2, State(50, 50))


@given(st.floats(-50, 150), st.floats(-50, 500))
def test_interpolation_exact_on_bilinear_data(s, c):
    grid = StateGrid(np.array([30.0, 50.0, 90.0]), np.array([0.0, 100.0, 300.0]))
    S, C = np.meshgrid(grid.soc, grid.pm10, indexing="ij")
    table = ValueTable(np.stack([S * 0.3 + C * 0.7]), grid, "sdpo")
    sc, cc = np.clip(s, 30, 90), np.clip(c, 0, 300)
    assert interpolate(table, 0, State(s, c)) == pytest.approx(0.3 * sc + 0.7 * cc, abs=1e-9)


def test_axis_weights_clamp():
    k, th = axis_weights(np.array([0.0, 1.0, 2.0]), np.array([-1.0, 0.5, 2.0, 3.0]))
    assert list(k) == [0, 0, 1, 1] and list(th) == [0.0, 0.5, 1.0, 1.0]


def test_grid_and_mesh_validation(station):
    with pytest.raises(ValueError):
        StateGrid(np.array([1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        StateGrid(np.array([2.0, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        ControlMesh(np.array([-10.0, 10.0]), (10.0, 30.0))
    mesh = ControlMesh.build(station.battery, station.ventilation, 21)
    assert mesh.control(0) == Control(0.0, station.ventilation.power_low)
    assert len(mesh) == 42
    assert [abs(c.u_b) for c in mesh.controls()] == sorted(abs(c.u_b) for c in mesh.controls())


@pytest.fixture(scope="module")
def small_day():
    m = tiny_model(T=30, lam=2e-3)
    prof = DeterministicProfiles.constant(30, 60.0, 15.0, 25.0)
    rng = np.random.default_rng(1)
    sup = np.sort(rng.uniform(0, 200, (31, 3)), axis=1)
    q = QuantizedMarginal(sup, np.tile([0.5, 0.3, 0.2], (31, 1)), prof)
    grid = StateGrid.default(m, 7, 6, pm10_top=200.0)
    return m, prof, q, grid


def test_values_nonnegative_and_monotone_in_soc(small_day):
    m, _, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    V = backward_induction_sdpo(m, grid, mesh, q).values
    assert np.all(V >= 0) and np.all(np.isfinite(V))
    assert np.all(np.diff(V[0], axis=0) <= 1e-9)


def test_mesh_refinement_never_hurts(small_day):
    m, _, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    coarse = backward_induction_sdpo(m, grid, mesh, q).values
    fine = backward_induction_sdpo(m, grid, mesh.refined(2), q).values
    assert np.all(fine <= coarse + 1e-9)


def test_online_sdpo_reproduces_offline_argmin(small_day):
    m, prof, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    table = backward_induction_sdpo(m, grid, mesh, q)
    st_ = Stages(m, grid, mesh, prof)
    pol = sdpo_policy(m, table, mesh, MarginalConditional(q), prof)
    for t in (0, 11, 29):
        _, arg = sdpo_stage(st_, table.values[t + 1], q.support[t + 1], q.probs[t + 1], t)
        for i in range(len(grid.soc)):
            for j in range(len(grid.pm10)):
                u = pol.decide(t, State(grid.soc[i], grid.pm10[j]), NoiseVector(0, 17.0, 0, 0))
                assert u == mesh.control(arg[i, j])


def test_tie_break_with_free_energy():
    m = lattice_model(T=2, prices=(0.0, 0.0), lam=0.0)
    prof = DeterministicProfiles.constant(2, D, N, CO)
    q = QuantizedMarginal(np.zeros((3, 1)), np.ones((3, 1)), prof)
    mesh = ControlMesh(np.array([-30.0, 0.0, 30.0]), (10.0, 30.0))
    table = backward_induction_sdpo(m, GRID, mesh, q)
    pol = sdpo_policy(m, table, mesh, MarginalConditional(q), prof)
    assert pol.decide(0, State(90.0, 50.0), NoiseVector(D, 0, N, CO)) == Control(0.0, 10.0)


def test_single_atom_online_is_one_step_lookahead(small_day):
    m, prof, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    table = backward_induction_sdpo(m, grid, mesh, q)
    one = QuantizedMarginal(np.full((31, 1), 70.0), np.ones((31, 1)), prof)
    pol = sdpo_policy(m, table, mesh, MarginalConditional(one), prof)
    t, x = 5, State(47.0, 93.0)
    w = NoiseVector(prof.d[t + 1], 70.0, prof.n[t + 1], prof.c_o[t + 1])
    best, arg = np.inf, None
    for u in mesh.controls():
        if not admissible(m, x, u):
            continue
        y = dynamics(m, t, x, u, w)
        v = stage_cost(m.economics, t, x, u, w, y) + interpolate(table, t + 1, y)
        if v < best - 1e-12:
            best, arg = v, u
    assert pol.decide(t, x, NoiseVector(0, 5.0, 0, 0)) == arg


def test_sdpa_memoryless_is_flat_in_w_and_agrees_with_sdpo(small_day):
    m, prof, _, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    z, pz = np.array([1.0, 3.0, 5.0]), np.array([0.2, 0.5, 0.3])
    model, atoms = ar_model(0.0, z, pz, eps=0.1, T=30, profiles=prof)
    aug = grid.augmented(braking_axis(200.0, 6))
    sdpa = backward_induction_sdpa(m, aug, mesh, model, atoms)
    spread = sdpa.values[:-1].max(axis=-1) - sdpa.values[:-1].min(axis=-1)
    assert spread.max() <= 1e-9
    b_next = braking_transition(0.0, z, 0.0, 0.1)
    q = QuantizedMarginal(np.tile(b_next, (31, 1)), np.tile(pz, (31, 1)), prof)
    sdpo = backward_induction_sdpo(m, grid, mesh, q)
    np.testing.assert_allclose(sdpa.values[..., 0], sdpo.values, atol=1e-9)
    pa = sdpa_policy(m, sdpa, mesh, model, atoms)
    po = sdpo_policy(m, sdpo, mesh, MarginalConditional(q), prof)
    for t in (0, 14, 29):
        for s in grid.soc[::2]:
            for c in grid.pm10[::2]:
                x, w = State(s, c), NoiseVector(0, 37.0, 0, 0)
                assert pa.decide(t, x, w) == po.decide(t, x, w)


def test_sdpa_single_atom_is_deterministic():
    m = lattice_model()
    model, atoms = ar_model(1.0, (np.log(2.0),), (1.0,))
    axis = braking_axis(127.0, 8, eps_log=1.0)
    table = backward_induction_sdpa(m, GRID.augmented(axis), MESH, model, atoms)
    w = [NoiseVector(D, b, N, CO) for b in (1.0, 3.0, 7.0)]
    for i, s in enumerate(GRID.soc):
        best, _ = open_loop_optimum(m, state(s, 0.0), MESH.controls(), w)
        assert table.values[0, i, 0, 0] == pytest.approx(best, abs=1e-9)


def test_value_table_round_trip(small_day, tmp_path):
    m, _, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    table = backward_induction_sdpo(m, grid, mesh, q)
    table.save(tmp_path / "v")
    back = ValueTable.load(tmp_path / "v")
    assert back.values.tobytes() == table.values.tobytes() and back.model_hash == m.config_hash()


def test_sdpa_requires_augmented_grid(small_day):
    m, prof, _, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    model, atoms = ar_model(0.5, (1.0,), (1.0,), T=30, profiles=prof)
    with pytest.raises(ValueError):
        backward_induction_sdpa(m, grid, mesh, model, atoms)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 29), st.floats(30, 90), st.floats(0, 250), st.floats(0, 300))
def test_policy_controls_are_admissible(small_day, t, s, c, b):
    m, prof, q, grid = small_day
    mesh = ControlMesh.build(m.battery, m.ventilation, 5)
    pol = sdpo_policy(m, _table(m, grid, mesh, q), mesh, MarginalConditional(q), prof)
    assert admissible(m, State(s, c), pol.decide(t, State(s, c), NoiseVector(0, b, 0, 0)))


_CACHE = {}


def _table(m, grid, mesh, q):
    key = id(q)
    if key not in _CACHE:
        _CACHE[key] = backward_induction_sdpo(m, grid, mesh, q)
    return _CACHE[key]
