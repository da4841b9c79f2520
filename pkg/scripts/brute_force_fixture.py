"""Exhaustive minimization of one 4-cell step, stored as a test fixture.

Grid search over a 40-point log grid per cell and a 100-point grid in X,
with the transport cost evaluated by a vectorized quantile formula that is
independent of the package's sweep, followed by a Nelder-Mead polish that
uses the piecewise north-west-corner oracle.

    python3 scripts/brute_force_fixture.py [output.json]
"""
import json
import math
import sys
import time

import numpy as np
from scipy.optimize import minimize

from jko_corrosion.core import GridDensity, ModelParams, PenaltyParams, State, boltzmann_f
from jko_corrosion.transport import lp_oracle_w2

PARAMS = dict(alpha=1.0, lam=1.0, beta=0.2, theta=0.3)
PREV_VALUES = [0.58, 0.8, 0.95, 1.0]
X_PREV = 1.0
TAU = 0.05
N_RHO, N_X = 40, 100
RHO_RANGE = (0.35, 1.25)
CHUNK = 1 << 17


def quantile(levels, knots_l, knots_x):
    """Piecewise-linear quantile with per-row knots, evaluated at per-row levels."""
    out = np.broadcast_to(knots_x[:, :1], levels.shape).copy()
    dl = np.diff(knots_l, axis=1)
    slope = np.where(dl > 0, np.diff(knots_x, axis=1) / np.where(dl > 0, dl, 1.0), 0.0)
    for k in range(dl.shape[1]):
        out += slope[:, k:k + 1] * np.clip(levels - knots_l[:, k:k + 1], 0.0, dl[:, k:k + 1])
    return out


def side_knots(values, X, atom, lam):
    """Quantile knots of atom*delta_0 + density on [0, X] + Lebesgue on [X, lam]."""
    rows, n = values.shape
    h = X / n
    cum = atom[:, None] + np.cumsum(values, axis=1) * h
    lev = np.concatenate([np.zeros((rows, 1)), atom[:, None], cum, cum[:, -1:] + (lam - X)], axis=1)
    pos = np.concatenate([np.zeros((rows, 2)), np.tile(h * np.arange(1, n + 1), (rows, 1)),
                          np.full((rows, 1), lam)], axis=1)
    return lev, pos


def batch_w2(values, X, prev):
    rows, n = values.shape
    m_src = X / n * np.sum(values - 1.0, axis=1)
    m_tgt = X_PREV / prev.size * float(np.sum(prev - 1.0))
    gap = m_src - m_tgt
    lam = max(X, X_PREV)
    ls, ps = side_knots(values, X, np.maximum(-gap, 0.0), lam)
    lt, pt = side_knots(np.tile(prev, (rows, 1)), X_PREV, np.maximum(gap, 0.0), lam)
    total = np.minimum(ls[:, -1], lt[:, -1])
    lev = np.sort(np.minimum(np.concatenate([ls, lt], axis=1), total[:, None]), axis=1)
    g = quantile(lev, ls, ps) - quantile(lev, lt, pt)
    d = np.diff(lev, axis=1)
    return np.sum(d * (g[:, :-1] ** 2 + g[:, :-1] * g[:, 1:] + g[:, 1:] ** 2), axis=1) / 3.0, gap


def batch_j(values, X, prev, p, pp):
    w2, dm = batch_w2(values, X, prev)
    h = X / values.shape[1]
    s = np.maximum(-dm - pp.m_tau, 0.0)
    return (w2 / (2 * TAU) + p.lam * (X - X_PREV) ** 2 / (2 * TAU)
            + h * np.sum(boltzmann_f(values, p.beta), axis=1) + p.theta * np.abs(dm)
            - p.alpha * X + 0.5 * pp.K_tau * s * s)


def oracle_j(z, prev_d, p, pp):
    v, X = np.exp(z[:-1]), z[-1]
    if X < X_PREV:
        return math.inf
    d = GridDensity(X, v)
    dm = d.h * float(np.sum(v - 1.0)) - prev_d.h * float(np.sum(prev_d.values - 1.0))
    s = max(-dm - pp.m_tau, 0.0)
    return (lp_oracle_w2(d, prev_d) / (2 * TAU) + p.lam * (X - X_PREV) ** 2 / (2 * TAU)
            + d.h * float(np.sum(boltzmann_f(v, p.beta))) + p.theta * abs(dm) - p.alpha * X
            + 0.5 * pp.K_tau * s * s)


def main(path):
    p = ModelParams(PARAMS["alpha"], PARAMS["lam"], PARAMS["beta"], PARAMS["theta"])
    prev = np.array(PREV_VALUES)
    prev_d = GridDensity(X_PREV, prev)
    pp = PenaltyParams.from_density(prev_d, p, TAU)
    grid = np.exp(np.linspace(math.log(RHO_RANGE[0]), math.log(RHO_RANGE[1]), N_RHO))
    a = float(np.log(prev).min())
    xs = np.linspace(X_PREV, X_PREV + 1.2 * TAU * (p.alpha - a) / p.lam, N_X)
    cand = np.stack(np.meshgrid(grid, grid, grid, grid, indexing="ij"), axis=-1).reshape(-1, 4)
    best = (math.inf, None, None)
    t0 = time.time()
    for X in xs:
        for s in range(0, cand.shape[0], CHUNK):
            J = batch_j(cand[s:s + CHUNK], X, prev, p, pp)
            k = int(np.argmin(J))
            if J[k] < best[0]:
                best = (float(J[k]), cand[s + k].copy(), float(X))
    print(f"grid search {time.time() - t0:.0f}s, best J {best[0]!r}")
    z0 = np.append(np.log(best[1]), best[2])
    res = None
    z = z0
    for _ in range(6):
        res = minimize(oracle_j, z, args=(prev_d, p, pp), method="Nelder-Mead",
                       options=dict(xatol=1e-11, fatol=1e-15, maxiter=20000, maxfev=40000, adaptive=True))
        z = res.x
    out = {
        "params": PARAMS, "prev_values": PREV_VALUES, "X_prev": X_PREV, "tau": TAU,
        "grid": {"n_rho": N_RHO, "n_x": N_X, "rho_range": list(RHO_RANGE), "best_J": best[0],
                 "best_values": best[1].tolist(), "best_X": best[2]},
        "polished": {"J": float(res.fun), "values": np.exp(res.x[:-1]).tolist(), "X": float(res.x[-1])},
    }
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    print(json.dumps(out["polished"]))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/brute_force_4cell.json")
