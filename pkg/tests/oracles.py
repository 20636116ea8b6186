"""Independent reference computations used by the tests.

Nothing here calls the optimizers under test; everything is built on
model.dynamics / model.stage_cost and brute-force enumeration.
"""

import itertools

import numpy as np

from subway_ems.model import (
    AirParams,
    BatteryParams,
    EconomicParams,
    NoiseVector,
    State,
    StationModel,
    TimeGrid,
    VentilationModes,
    admissible,
    dynamics,
    stage_cost,
)


def lattice_model(T=3, prices=(0.5, 1.0, 0.2), lam=0.01):
    """One-hour steps, lossless battery: ±30 kW moves SOC by exactly one 30 kWh node."""
    g = TimeGrid(delta_hours=1.0, horizon_steps=T, day_length=float(T))
    return StationModel(
        time=g,
        battery=BatteryParams(rho_c=1.0, rho_d=1.0, capacity=100.0, soc_min=30.0, soc_max=90.0, power_min=-30.0, power_max=30.0),
        air=AirParams(alpha=0.05, delta_dep=0.2, beta=0.001, rho_v=600.0, volume=60000.0),
        ventilation=VentilationModes(10.0, 30.0),
        economics=EconomicParams(tuple(prices[:T]), lam),
    )


def path_cost(m, x0, controls, noises):
    """Cost of an open-loop control sequence along one noise path w_1..w_T (inf if inadmissible)."""
    x, total = x0, 0.0
    for t, (u, w) in enumerate(zip(controls, noises)):
        if not admissible(m, x, u):
            return np.inf
        y = dynamics(m, t, x, u, w)
        total += stage_cost(m.economics, t, x, u, w, y)
        x = y
    return total + m.final_cost(x)


def tree_optimum(m, x0, controls, paths, probs):
    """Best closed-loop expected cost on a scenario tree by enumerating every tree policy.

    ``paths`` lists the K**T noise sequences w_1..w_T ordered so that path
    index in base K spells the atom history; the control at step t may
    depend on the atoms drawn at steps 1..t.
    """
    T = m.time.T
    U = len(controls)
    n_paths = len(paths)
    K = round(n_paths ** (1.0 / T))
    assert K**T == n_paths
    seq_list = list(itertools.product(range(U), repeat=T))
    C = np.array([[path_cost(m, x0, [controls[i] for i in seq], paths[p]) for seq in seq_list] for p in range(n_paths)])
    # node id of the decision taken at step t on path p: offset_t + prefix
    offsets = np.cumsum([0] + [K**t for t in range(T)])
    node = np.array([[offsets[t] + p // K ** (T - t) for t in range(T)] for p in range(n_paths)])
    n_nodes = offsets[-1]
    pols = np.array(list(itertools.product(range(U), repeat=n_nodes)), dtype=np.int64)
    weights = U ** np.arange(T - 1, -1, -1)
    total = np.zeros(len(pols))
    for p in range(n_paths):
        seq = pols[:, node[p]] @ weights
        total += probs[p] * C[p, seq]
    return float(total.min())


def iid_paths(d, b_atoms, b_probs, n, c_o, T):
    """All K**T stagewise-independent braking paths with constant d, n, c_o."""
    K = len(b_atoms)
    paths, probs = [], []
    for hist in itertools.product(range(K), repeat=T):
        paths.append([NoiseVector(d, float(b_atoms[k]), n, c_o) for k in hist])
        probs.append(float(np.prod([b_probs[k] for k in hist])))
    return paths, np.array(probs)


def ar_paths(b0, step, z_atoms, z_probs, d, n, c_o, T):
    """All paths of b_{t+1} = step(b_t, z) over the residual atoms."""
    K = len(z_atoms)
    paths, probs = [], []
    for hist in itertools.product(range(K), repeat=T):
        b, seq = b0, []
        for k in hist:
            b = float(step(b, z_atoms[k]))
            seq.append(NoiseVector(d, b, n, c_o))
        paths.append(seq)
        probs.append(float(np.prod([z_probs[k] for k in hist])))
    return paths, np.array(probs)


def open_loop_optimum(m, x0, controls, noises):
    """min over all |U|**h control sequences along one known noise path."""
    best, arg = np.inf, None
    for seq in itertools.product(controls, repeat=len(noises)):
        c = path_cost(m, x0, seq, noises)
        if c < best:
            best, arg = c, seq
    return best, arg


def simulate_states(m, x0, controls, noises):
    xs = [x0]
    for t, (u, w) in enumerate(zip(controls, noises)):
        xs.append(dynamics(m, t, xs[-1], u, w))
    return xs


def state(soc, pm10):
    return State(float(soc), float(pm10))
