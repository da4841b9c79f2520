"""Trajectory ledgers and checkers: dissipation, a-priori bounds, weak form, VI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from ._basis import CutoffChebyshev, cutoff, gauss_integrate, hat
from .core import (GridDensity, ModelParams, PenaltyParams, State, Trajectory,
                   entropy, lyapunov, remap, sample)
from .jko_stepper import StepReport

WEAK_BASIS_VERSION = 1
VI_BASIS_VERSION = 1
LOG_BOUND_TOL = 1e-3
SLOPE_BOUND_RTOL = 1e-2

_GL2 = np.array([-1.0, 1.0]) / math.sqrt(3.0)


@dataclass(frozen=True)
class Violation:
    kind: str
    cell: int
    magnitude: float
    step: int = -1


@dataclass
class DiagnosticsLedger:
    params: ModelParams
    x0: float
    a0: float
    initial_entropy: float
    cumulative_dsq_over_2tau: float = 0.0
    cumulative_theta_absdM: float = 0.0
    cumulative_penalty: float = 0.0
    lyapunov_series: list = field(default_factory=list)
    bound_violations: list = field(default_factory=list)
    step_bound_violations: list = field(default_factory=list)
    corrected_bound_violations: list = field(default_factory=list)
    channel_bulk: list = field(default_factory=list)
    channel_interface: list = field(default_factory=list)
    channel_boundary: list = field(default_factory=list)
    x_final: float = 0.0
    t_final: float = 0.0
    steps: int = 0
    all_accepted: bool = True

    @classmethod
    def start(cls, initial: State, p: ModelParams) -> "DiagnosticsLedger":
        d = initial.density
        led = cls(p, d.X, float(np.log(d.values).min()), entropy(d, p.beta))
        led.lyapunov_series.append(lyapunov(initial, p))
        led.x_final = d.X
        led.t_final = initial.t
        return led

    @property
    def dissipation_sum(self) -> float:
        return self.cumulative_dsq_over_2tau + self.cumulative_theta_absdM + self.cumulative_penalty

    @property
    def apriori_rhs(self) -> float:
        """int f(rho_0) + (alpha + e^(beta-1) - beta) X_final."""
        return self.initial_entropy + self.params.growth_constant * self.x_final

    @property
    def apriori_margin(self) -> float:
        return self.apriori_rhs - self.dissipation_sum

    @property
    def interface_bound(self) -> float:
        """X^0 + (T / lambda)(alpha - a) with a = min ln rho_0."""
        p = self.params
        return self.x0 + self.t_final / p.lam * (p.alpha - self.a0)

    def lyapunov_increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.lyapunov_series))


def bulk_dissipation(d: GridDensity) -> float:
    """4 sum h ((sqrt rho)')^2 with neighbour differences over interior edges."""
    r = np.sqrt(d.values)
    return float(4.0 * np.sum(np.diff(r) ** 2) / d.h)


def dissipation_ledger_update(ledger: DiagnosticsLedger, previous: State, new: State,
                              report: StepReport, p: ModelParams) -> DiagnosticsLedger:
    tau = report.tau
    ledger.cumulative_dsq_over_2tau += report.d_sq / (2.0 * tau)
    ledger.cumulative_theta_absdM += p.theta * abs(report.delta_mass)
    ledger.cumulative_penalty += report.penalty_value
    ledger.lyapunov_series.append(lyapunov(new, p))
    ledger.channel_bulk.append(bulk_dissipation(new.density))
    ledger.channel_interface.append(p.lam * ((new.X - previous.X) / tau) ** 2)
    ledger.channel_boundary.append(p.theta * abs(report.delta_mass) / tau)
    ledger.x_final = new.X
    ledger.t_final = new.t
    ledger.steps += 1
    ledger.all_accepted = ledger.all_accepted and report.accepted
    return ledger


def bounds_check(new: State, pp: PenaltyParams, tol: float = LOG_BOUND_TOL,
                 slope_tol: float | None = None, upper: float | None = None) -> list:
    """Cells whose ln rho leaves [a, b] or whose log slope leaves [-A, B_tau].

    ``upper`` overrides b for the upper log bound.
    """
    d = new.density
    lr = np.log(d.values)
    hi = pp.b if upper is None else upper
    Bt = pp.B_tau
    stol = SLOPE_BOUND_RTOL * Bt if slope_tol is None else slope_tol
    out = []
    for i in np.flatnonzero(lr > hi + tol):
        out.append(Violation("upper-log-bound", int(i), float(lr[i] - hi)))
    for i in np.flatnonzero(lr < pp.a - tol):
        out.append(Violation("lower-log-bound", int(i), float(pp.a - lr[i])))
    if d.n_cells > 1:
        s = np.diff(lr) / d.h
        for i in np.flatnonzero(s > Bt + stol):
            out.append(Violation("upper-slope-bound", int(i), float(s[i] - Bt)))
        for i in np.flatnonzero(s < -pp.A - stol):
            out.append(Violation("lower-slope-bound", int(i), float(-pp.A - s[i])))
    return out


def trace_band_sum(traj: Trajectory) -> float:
    """sum_n tau (ln rho^n(0) - ln rho_+)_+^2 over the steps after the initial state."""
    lp = math.log(traj.params.rho_plus)
    t = traj.times
    total = 0.0
    for k in range(1, len(traj)):
        ex = max(math.log(traj.states[k].density.rho_at_0) - lp, 0.0)
        total += (t[k] - t[k - 1]) * ex * ex
    return total


# ---------------------------------------------------------------- weak form

@dataclass(frozen=True, eq=False)
class WeakResidualReport:
    rho_residuals: np.ndarray
    x_residuals: np.ndarray
    vi_margins: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_rho(self) -> float:
        return float(np.max(np.abs(self.rho_residuals))) if self.rho_residuals.size else 0.0

    @property
    def max_x(self) -> float:
        return float(np.max(np.abs(self.x_residuals))) if self.x_residuals.size else 0.0

    @property
    def min_margin(self) -> float:
        return float(np.min(self.vi_margins)) if self.vi_margins.size else 0.0


def time_nodes(T: float, size: int) -> np.ndarray:
    """Hat nodes j T / size, j = 0..size; hats 0..size-1 vanish at T."""
    return T * np.arange(size + 1) / size


def _hat_interval_integrals(times: np.ndarray, nodes: np.ndarray, j: int) -> np.ndarray:
    """Exact integral of hat j over each [times[n], times[n+1]]."""
    pts = np.union1d(times, nodes)
    pts = pts[(pts >= times[0]) & (pts <= times[-1])]
    v = hat(pts, nodes, j)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(pts) * (v[:-1] + v[1:]))))
    return np.diff(np.interp(times, pts, cum))


def weak_support(traj: Trajectory) -> float:
    """Spatial support of the weak-form test functions, beyond the a-priori reach of X."""
    p = traj.params
    d0 = traj.initial.density
    a = float(np.log(d0.values).min())
    T = traj.times[-1]
    return 1.25 * (d0.X + T * (p.alpha - a) / p.lam)


def _space_pairing(d: GridDensity, basis: CutoffChebyshev, k: int) -> float:
    """int_{R+} rho xi_k with rho = 1 beyond X."""
    L = basis.support
    brk = np.union1d(d.edges, [basis.flat_until, L])
    brk = brk[brk <= L]
    if brk[-1] < L:
        brk = np.append(brk, L)
    return float(gauss_integrate(lambda x: sample(d, x) * basis(k, x), brk).sum())


def _gradient_pairing(d: GridDensity, basis: CutoffChebyshev, k: int) -> float:
    """int_0^X rho' xi_k' with rho' the interior jumps (the jump at X is excluded)."""
    return float(np.sum(np.diff(d.values) * basis(k, d.edges[1:-1], 1)))


def weak_residuals(traj: Trajectory, basis_size: int = 8, time_size: int | None = None
                   ) -> WeakResidualReport:
    """Residuals of the weak density equation and of the interface law.

    Test functions are xi_k(x) eta_j(t) with xi_k Chebyshev-times-cutoff on
    [0, L] and eta_j time hats vanishing at T. The JKO density is read as
    rho^{n+1} on (t_n, t_{n+1}] and Delta M^n is located at t_n.
    """
    if len(traj) < 2:
        raise ValueError("weak residuals need at least two states")
    nt = basis_size if time_size is None else time_size
    times = traj.times
    T = times[-1]
    p = traj.params
    L = weak_support(traj)
    basis = CutoffChebyshev(basis_size, L, 0.5 * L)
    nodes = time_nodes(T, nt)
    states = traj.states
    dM = np.diff(traj.masses)
    pair = np.array([[_space_pairing(s.density, basis, k) for k in range(basis_size)] for s in states])
    grad = np.array([[_gradient_pairing(s.density, basis, k) for k in range(basis_size)]
                     for s in states[1:]])
    xi0 = basis.scale * np.array([basis._raw(k, np.array([0.0]))[0] for k in range(basis_size)])
    X = traj.interface
    rX = np.array([s.density.rho_at_X_minus for s in states[1:]])
    x_law = p.lam * np.diff(X) / np.diff(times) - p.alpha + (1.0 - rX) + np.log(rX)

    rho_res = np.empty((basis_size, nt))
    x_res = np.empty(nt)
    for j in range(nt):
        eta = hat(times, nodes, j)
        ieta = _hat_interval_integrals(times, nodes, j)
        # -int int rho d_t phi, after summation by parts in time
        dt_term = -(np.diff(eta)[:, None] * pair[1:]).sum(axis=0)
        init_term = -eta[0] * pair[0]
        dm_term = -xi0 * float(np.sum(eta[:-1] * dM))
        diff_term = (ieta[:, None] * grad).sum(axis=0)
        rho_res[:, j] = dt_term + init_term + dm_term + diff_term
        x_res[j] = float(np.sum(ieta * x_law))
    return WeakResidualReport(rho_res.ravel(), x_res)


# ------------------------------------------------------- variational inequality

def vi_cutoff(x, X0: float, order: int = 0):
    """chi: 1 on [0, X0/2], 0 beyond 3 X0/4, quintic in between."""
    return cutoff(x, 0.5 * X0, 0.75 * X0, order)


def _p1(d: GridDensity, x):
    """Piecewise-linear interpolant through the cell midpoints, flat at the ends."""
    return np.interp(x, d.midpoints, d.values)


def _p1_slope(d: GridDensity, x):
    m = d.midpoints
    s = np.diff(d.values) / d.h
    idx = np.searchsorted(m, x, side="right") - 1
    inside = (idx >= 0) & (idx < m.size - 1)
    return np.where(inside, s[np.clip(idx, 0, m.size - 2)], 0.0)


def _vi_space_terms(d: GridDensity, X0: float):
    """(int u^2/2, int u, int (u')^2, int g u, int g) over [0, X0]."""
    brk = np.union1d(d.midpoints, [0.0, 0.5 * X0, 0.75 * X0, X0])
    brk = brk[(brk >= 0.0) & (brk <= X0)]

    def fields(x):
        rho = _p1(d, x)
        drho = _p1_slope(d, x)
        c0, c1, c2 = (vi_cutoff(x, X0, o) for o in range(3))
        u = c0 * rho
        du = c1 * rho + c0 * drho
        g = -c2 * rho - 2.0 * c1 * drho
        return u, du, g

    def integral(fn):
        return float(gauss_integrate(lambda x: fn(*fields(x)), brk).sum())

    return (integral(lambda u, du, g: 0.5 * u * u), integral(lambda u, du, g: u),
            integral(lambda u, du, g: du * du), integral(lambda u, du, g: g * u),
            integral(lambda u, du, g: g))


def vi_check(traj: Trajectory, eta_values=None, time_size: int = 8, eta_paths=None) -> np.ndarray:
    """Margins RHS - LHS of the weak boundary inequality; negative means violated.

    ``eta_values`` are space-time constants in [rho_-, rho_+]; ``eta_paths``
    are arrays of boundary values at the trajectory times, read as
    piecewise-linear in t. phi runs over nonnegative time hats vanishing at T.
    """
    p = traj.params
    lo, hi = p.rho_minus, p.rho_plus
    times = traj.times
    if len(traj) < 2:
        raise ValueError("the variational inequality needs at least two states")
    etas = []
    for v in ([] if eta_values is None else np.atleast_1d(eta_values)):
        etas.append(np.full(times.size, float(v)))
    for path in ([] if eta_paths is None else eta_paths):
        etas.append(np.asarray(path, dtype=float))
    for e in etas:
        if e.shape != times.shape:
            raise ValueError("eta path must have one value per trajectory time")
        if np.any(e < lo - 1e-15) or np.any(e > hi + 1e-15):
            raise ValueError("eta must take values in [rho_minus, rho_plus]")
    if not etas:
        return np.zeros(0)

    X0 = traj.initial.X
    T = times[-1]
    nodes = time_nodes(T, time_size)
    sp = [_vi_space_terms(s.density, X0) for s in traj.states]
    q2, q1, qd, qgu, qg = (np.array(c) for c in zip(*sp))

    # quadrature in time: subintervals between step times and hat nodes
    pts = np.union1d(times, nodes)
    pts = pts[pts <= T]
    a, b = pts[:-1], pts[1:]
    tq = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * _GL2[None, :]
    wq = np.repeat((0.5 * (b - a))[:, None], 2, axis=1)
    # density on (t_n, t_{n+1}] is state n+1
    sidx = np.clip(np.searchsorted(times, tq, side="left"), 1, times.size - 1)
    margins = []
    for e in etas:
        eq = np.interp(tq, times, e)
        de = np.diff(e) / np.diff(times)
        deq = de[sidx - 1]
        for j in range(time_size):
            phi = hat(tq, nodes, j)
            dphi = np.zeros_like(tq)
            if j > 0:
                m = (tq > nodes[j - 1]) & (tq < nodes[j])
                dphi[m] = 1.0 / (nodes[j] - nodes[j - 1])
            m = (tq > nodes[j]) & (tq < nodes[j + 1])
            dphi[m] = -1.0 / (nodes[j + 1] - nodes[j])
            lhs = float(np.sum(wq * (-dphi * (q2[sidx] - eq * q1[sidx])
                                     + phi * q1[sidx] * deq + phi * qd[sidx])))
            rhs = (float(hat(0.0, nodes, j)) * (q2[0] - e[0] * q1[0])
                   + float(np.sum(wq * phi * (qgu[sidx] - eq * qg[sidx]))))
            margins.append(rhs - lhs)
    return np.array(margins)


# ---------------------------------------------------------------- dual norm

def hstar_norm(w, L: float) -> float:
    """Discrete dual H^1 norm on [0, L]: sqrt(sum h w v) with -v'' + v = w, zero-flux ends."""
    w = np.asarray(w, dtype=float)
    n = w.size
    if n == 0 or not np.any(w):
        return 0.0
    h = L / n
    k = 1.0 / (h * h)
    ab = np.zeros((3, n))
    ab[0, 1:] = -k
    ab[2, :-1] = -k
    ab[1, :] = 2.0 * k + 1.0
    ab[1, 0] -= k
    ab[1, -1] -= k
    v = solve_banded((1, 1), ab, w)
    return math.sqrt(max(float(h * np.dot(w, v)), 0.0))


@dataclass(frozen=True)
class TimeTranslate:
    integral: float
    series_norm: float
    n_steps: int


def time_translate(traj: Trajectory, L: float | None = None, n_cells: int | None = None
                   ) -> TimeTranslate:
    """tau sum_n ||rho^{n+1} - rho^n||_{H*}^2 and sqrt(sum_n ||.||^2) on a common grid of [0, L]."""
    if len(traj) < 2:
        return TimeTranslate(0.0, 0.0, 0)
    if L is None:
        L = float(traj.interface.max())
    if n_cells is None:
        h = min(s.density.h for s in traj.states)
        n_cells = max(1, int(round(L / h)))
    grids = [remap(s.density, L, n_cells).values for s in traj.states]
    sq = np.array([hstar_norm(grids[k + 1] - grids[k], L) ** 2 for k in range(len(grids) - 1)])
    dts = np.diff(traj.times)
    return TimeTranslate(float(np.sum(dts * sq)), math.sqrt(float(np.sum(sq))), sq.size)
