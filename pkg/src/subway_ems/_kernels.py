"""Compiled Bellman backups shared by SDPO, SDPA and the MPC subproblem."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def backup(Vc, ks, ws, feas, G, H, order_j, order_m, out, arg):
    """One Bellman minimization over a (soc, pm10) grid.

    Vc[m, k, c]   continuation already interpolated along pm10 for mode m
    ks, ws, feas  soc successor bracket/weight/feasibility per (soc node, level)
    G[j, m]       expected import cost of control (j, m)
    H[m, c]       comfort cost of the pm10 successor
    Controls are scanned in tie-break order; only strict improvements win.
    """
    ns = ks.shape[0]
    nc = Vc.shape[2]
    for i in range(ns):
        for c in range(nc):
            out[i, c] = np.inf
            arg[i, c] = -1
        for o in range(order_j.shape[0]):
            j = order_j[o]
            m = order_m[o]
            if not feas[i, j]:
                continue
            k = ks[i, j]
            w = ws[i, j]
            g = G[j, m]
            for c in range(nc):
                q = g + H[m, c] + (1.0 - w) * Vc[m, k, c] + w * Vc[m, k + 1, c]
                if q < out[i, c]:
                    out[i, c] = q
                    arg[i, c] = o


@nb.njit(cache=True)
def interp_pm10(V, kc, tc, Vc):
    """Vc[m, s, c] = V[s, .] linearly interpolated at the pm10 successor (kc, tc)[m, c]."""
    nm = kc.shape[0]
    ns = V.shape[0]
    nc = kc.shape[1]
    for m in range(nm):
        for s in range(ns):
            for c in range(nc):
                k = kc[m, c]
                t = tc[m, c]
                Vc[m, s, c] = (1.0 - t) * V[s, k] + t * V[s, k + 1]


@nb.njit(cache=True)
def stage_backup(V_next, kc, tc, H, G, ks, ws, feas, order_j, order_m, Vc, out, arg):
    """pm10 interpolation followed by one Bellman minimization."""
    interp_pm10(V_next, kc, tc, Vc)
    backup(Vc, ks, ws, feas, G, H, order_j, order_m, out, arg)


@nb.njit(cache=True)
def deterministic_backward(V_end, kc, tc, H, G, ks, ws, feas, order_j, order_m, values):
    """Backward recursion along a single noise path.

    Stage arrays are indexed by s = 0..S-1 (transition s -> s+1).
    values[S] must hold V_end on entry; values[s] for s = 1..S-1 are filled.
    Stage 0 is left to the caller, which only needs the argmin at one state.
    """
    S = G.shape[0]
    nm = kc.shape[1]
    ns = V_end.shape[0]
    nc = V_end.shape[1]
    Vc = np.empty((nm, ns, nc))
    arg = np.empty((ns, nc), dtype=np.int64)
    for s in range(S - 1, 0, -1):
        stage_backup(values[s + 1], kc[s], tc[s], H[s], G[s], ks, ws, feas, order_j, order_m, Vc, values[s], arg)
