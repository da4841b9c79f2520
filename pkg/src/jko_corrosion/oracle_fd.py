"""Strong-form reference solver on the moving layer, in the scaled coordinate y = x / X.

Conservative finite volumes for q = X rho:

    d_t (X rho) = d_y (rho_y / X + y X' rho),

backward Euler in time with X' lagged (explicit). The face flux at y = 1
reduces to X' under the conservative interface condition, and the face flux
at y = 0 is rho_x(0+), so M^+ = M - dt * flux_0 holds exactly. The boundary
exchange at x = 0 is a one-point complementarity problem resolved by an
active-set re-solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .core import GridDensity, ModelParams, State, Trajectory

FREE, PLUS, MINUS = "free", "plus", "minus"
MAX_RETRIES = 4


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OracleState:
    t: float
    X: float
    values: np.ndarray
    mass_excess: float
    clamp: str = FREE
    flux0: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise OracleFailure("oracle values must stay strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        quad = self.X * float(np.mean(v - 1.0))
        if abs(quad - self.mass_excess) > 1e-10 * max(1.0, self.X):
            raise OracleFailure(f"mass excess {self.mass_excess!r} drifted from quadrature {quad!r}")

    @classmethod
    def from_density(cls, t: float, d: GridDensity) -> "OracleState":
        return cls(float(t), d.X, d.values, d.h * float(np.sum(d.values - 1.0)))

    def to_state(self) -> State:
        return State.from_density(self.t, GridDensity(self.X, self.values))


@dataclass(frozen=True)
class FDOptions:
    freeze_interface: bool = False
    right_dirichlet: float | None = None
    left_dirichlet: float | None = None


def interface_velocity(trace: float, p: ModelParams) -> float:
    return (p.alpha - (1.0 - trace) - math.log(trace)) / p.lam


def _solve(s: OracleState, dt: float, X1: float, V: float, left: float | None,
           opts: FDOptions) -> tuple[np.ndarray, float]:
    """Backward-Euler solve; ``left`` is the clamp value at y = 0 or None (zero flux)."""
    r = s.values
    m = r.size
    k = 1.0 / m
    yf = np.arange(1, m) * k
    D = 1.0 / (k * X1)
    # F_{i+1/2} = D (r_{i+1} - r_i) + y V (r_i + r_{i+1}) / 2, and k X1 r_i - dt (F_{i+1/2} - F_{i-1/2}) = k X r_i^old
    lo_i = -D + 0.5 * yf * V   # coefficient of r_i in F_{i+1/2}
    hi_i = D + 0.5 * yf * V    # coefficient of r_{i+1} in F_{i+1/2}
    diag = np.full(m, k * X1)
    upper = np.zeros(m)
    lower = np.zeros(m)
    diag[:-1] -= dt * lo_i
    upper[1:] = -dt * hi_i
    diag[1:] += dt * hi_i
    lower[:-1] = dt * lo_i
    rhs = k * s.X * r.copy()
    if left is not None:
        g = 2.0 * D  # flux_0 = g (r_0 - c)
        diag[0] += dt * g
        rhs[0] += dt * g * left
    if opts.right_dirichlet is None:
        rhs[-1] += dt * V
    else:
        g = 2.0 * D
        c = opts.right_dirichlet
        diag[-1] += dt * g  # F(1) = g (c - r_last) + V c
        rhs[-1] += dt * (g * c + V * c)
    ab = np.zeros((3, m))
    ab[0] = upper
    ab[1] = diag
    ab[2] = lower
    try:
        new = solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise OracleFailure(f"tridiagonal solve failed: {exc}") from exc
    flux0 = 0.0 if left is None else 2.0 * D * (new[0] - left)
    return new, flux0


def _single_step(s: OracleState, dt: float, p: ModelParams, opts: FDOptions
                 ) -> tuple[OracleState, bool]:
    """One step; the flag is False when the boundary active set cycles."""
    V = 0.0 if opts.freeze_interface else interface_velocity(float(s.values[-1]), p)
    X1 = s.X + dt * V
    if not X1 > 0.0:
        raise OracleFailure("interface crossed the origin")
    if opts.left_dirichlet is not None:
        new, flux0 = _solve(s, dt, X1, V, opts.left_dirichlet, opts)
        clamp = PLUS
    else:
        clamp = s.clamp
        seen = []
        while True:
            seen.append(clamp)
            left = {FREE: None, PLUS: p.rho_plus, MINUS: p.rho_minus}[clamp]
            new, flux0 = _solve(s, dt, X1, V, left, opts)
            if clamp == FREE:
                nxt = PLUS if new[0] > p.rho_plus else MINUS if new[0] < p.rho_minus else FREE
            elif clamp == PLUS:
                nxt = FREE if flux0 < 0.0 else PLUS
            else:
                nxt = FREE if flux0 > 0.0 else MINUS
            if nxt == clamp:
                break
            if nxt in seen:
                return s, False
            clamp = nxt
    if opts.right_dirichlet is None:
        # F(1) = X' cancels the appended length, leaving the exchange law M' = -rho_x(0+)
        M1 = s.mass_excess - dt * flux0
    else:
        # the pinned right value is a test device with no exchange law; use quadrature
        M1 = X1 * float(np.mean(new - 1.0))
    return OracleState(s.t + dt, X1, new, M1, clamp, flux0), True


def fd_step(s: OracleState, dt: float, p: ModelParams, opts: FDOptions = FDOptions(),
            _depth: int = 0) -> OracleState:
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    new, ok = _single_step(s, dt, p, opts)
    if ok:
        return new
    if _depth >= MAX_RETRIES:
        raise OracleFailure("boundary active set keeps oscillating after halving dt")
    half = fd_step(s, 0.5 * dt, p, opts, _depth + 1)
    return fd_step(half, 0.5 * dt, p, opts, _depth + 1)


def run_oracle(initial: OracleState, T: float, dt: float, p: ModelParams,
               opts: FDOptions = FDOptions(), sample_every: int = 1) -> Trajectory:
    """Time loop to T; states every ``sample_every`` steps plus the final one."""
    if T < 0.0:
        raise ValueError("T must be nonnegative")
    traj = Trajectory(p, [initial.to_state()])
    if T == 0.0:
        return traj
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    step = T / n
    s = initial
    worst = 0.0
    for i in range(1, n + 1):
        prev = s
        s = fd_step(s, step, p, opts)
        s = replace(s, t=initial.t + i * step)
        if s.clamp != prev.clamp:
            traj.events.append({"step": i, "t": s.t, "kind": "clamp", "from": prev.clamp, "to": s.clamp})
        # bookkept M against the quadrature of the new cell values
        worst = max(worst, abs(s.X * float(np.mean(s.values - 1.0)) - s.mass_excess))
        if i % sample_every == 0 or i == n:
            traj.states.append(s.to_state())
    traj.events.append({"step": n, "t": s.t, "kind": "conservation", "max_defect": worst})
    return traj
