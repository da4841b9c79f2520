"""Model constants, cell densities, and the entropy-type functionals.

Densities live on ``n`` uniform cells of the current oxide layer ``[0, X]``
and are implicitly equal to 1 on ``(X, inf)``. Every integral is a midpoint
sum, which is exact for this piecewise-constant representation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

log = logging.getLogger(__name__)

DEFAULT_VARTHETA = 1.0 / 15.0
DEFAULT_VARTHETA_PRIME = 0.75


class ConfigError(ValueError):
    """Raised when model or run parameters violate an admissibility condition."""


def derive_thresholds(beta: float, theta: float) -> tuple[float, float]:
    """Return ``(rho_minus, rho_plus)`` for the boundary exchange thresholds."""
    if not (math.isfinite(beta) and math.isfinite(theta)):
        raise ConfigError("beta and theta must be finite")
    if not theta > 0.0:
        raise ConfigError(f"theta must be > 0 (got theta={theta!r})")
    if not beta + theta < 1.0:
        raise ConfigError(f"beta+theta must be < 1 (got beta+theta={beta + theta!r})")
    return math.exp(beta - theta - 1.0), math.exp(beta + theta - 1.0)


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    lam: float
    beta: float
    theta: float
    rho_minus: float = field(init=False)
    rho_plus: float = field(init=False)

    def __post_init__(self):
        # alpha = 0 is kept as the degenerate no-drive case used by stationary fixtures
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ConfigError(f"alpha must be >= 0 (got {self.alpha!r})")
        if not (math.isfinite(self.lam) and self.lam > 0.0):
            raise ConfigError(f"lambda must be > 0 (got {self.lam!r})")
        rm, rp = derive_thresholds(self.beta, self.theta)
        object.__setattr__(self, "rho_minus", rm)
        object.__setattr__(self, "rho_plus", rp)

    @property
    def f_min(self) -> float:
        """Global minimum of the entropy integrand, reached at exp(beta - 1)."""
        return self.beta - math.exp(self.beta - 1.0)

    @property
    def growth_constant(self) -> float:
        """alpha + exp(beta - 1) - beta, the slope in the a-priori bounds."""
        return self.alpha - self.f_min


@dataclass(frozen=True, eq=False)
class GridDensity:
    X: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size < 1:
            raise ValueError("a density needs at least one cell")
        if not (math.isfinite(self.X) and self.X > 0.0):
            raise ValueError(f"domain length must be positive and finite (got {self.X!r})")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ValueError("cell values must be strictly positive and finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "X", float(self.X))

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return self.X / self.values.size

    @property
    def edges(self) -> np.ndarray:
        n = self.values.size
        return self.X * (np.arange(n + 1) / n)

    @property
    def midpoints(self) -> np.ndarray:
        n = self.values.size
        return self.X * ((np.arange(n) + 0.5) / n)

    @property
    def rho_at_0(self) -> float:
        return float(self.values[0])

    @property
    def rho_at_X_minus(self) -> float:
        return float(self.values[-1])

    def __eq__(self, other):
        if not isinstance(other, GridDensity):
            return NotImplemented
        return self.X == other.X and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.X, self.values.tobytes()))

    def refined(self, factor: int = 2) -> "GridDensity":
        """Split every cell into ``factor`` equal cells (same function)."""
        return GridDensity(self.X, np.repeat(self.values, factor))


def boltzmann_f(r, beta: float):
    """Entropy integrand ``r (ln r - beta) + beta`` with f(0) = beta."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("boltzmann_f is defined for r >= 0 only")
    out = xlogy(arr, arr) - beta * arr + beta
    return float(out) if out.ndim == 0 else out


def mass_excess(d: GridDensity) -> float:
    """Signed mass ``int_0^X (rho - 1)``; the tail beyond X adds nothing."""
    return float(d.h * np.sum(d.values - 1.0))


def entropy(d: GridDensity, beta: float) -> float:
    return float(d.h * np.sum(boltzmann_f(d.values, beta)))


def energy(X: float, d: GridDensity, ref_mass_excess: float, p: ModelParams) -> float:
    """Entropy plus boundary exchange cost minus interface drive."""
    if not math.isclose(X, d.X, rel_tol=1e-14, abs_tol=0.0):
        raise ValueError("energy: X must equal the density's domain length")
    dm = mass_excess(d) - ref_mass_excess
    return entropy(d, p.beta) + p.theta * abs(dm) - p.alpha * X


@dataclass(frozen=True)
class State:
    t: float
    density: GridDensity
    mass_excess: float

    def __post_init__(self):
        d = self.density
        quad = mass_excess(d)
        scale = d.X + d.h * float(np.sum(d.values))
        if abs(quad - self.mass_excess) > 1e-12 * scale:
            raise ValueError(
                f"mass excess {self.mass_excess!r} disagrees with quadrature {quad!r}"
            )

    @classmethod
    def from_density(cls, t: float, density: GridDensity) -> "State":
        return cls(float(t), density, mass_excess(density))

    @property
    def X(self) -> float:
        return self.density.X


def lyapunov(s: State, p: ModelParams) -> float:
    """``int_0^X f(rho) - alpha X``; the integrand vanishes where rho = 1."""
    return entropy(s.density, p.beta) - p.alpha * s.density.X


@dataclass(frozen=True)
class PenaltyParams:
    vartheta: float
    delta0: float
    a: float
    b: float
    A: float
    B0: float
    B0_prime: float
    tau: float
    m_tau: float
    K_tau: float
    b_gap_floored: bool = False

    def __post_init__(self):
        if not 0.0 < self.vartheta < 0.5:
            raise ConfigError("vartheta must lie in (0, 1/2)")
        if not self.tau > 0.0:
            raise ConfigError("tau must be > 0")
        if not (self.m_tau > 0.0 and self.K_tau > 0.0):
            raise ConfigError("penalty constants must be positive")

    @property
    def B_tau(self) -> float:
        return self.B0_prime * self.tau ** (-self.vartheta)

    @classmethod
    def build(cls, a: float, b: float, A: float, B0: float, p: ModelParams, tau: float,
              vartheta: float = DEFAULT_VARTHETA, delta0: float = 1.0,
              epsilon_K: float = 1e-3, warn: bool = True) -> "PenaltyParams":
        if not delta0 > 0.0:
            raise ConfigError("delta0 must be > 0")
        b0p = max(B0, delta0)
        gap = b - math.log(p.rho_plus)
        floored = False
        if gap <= epsilon_K:
            if warn:
                log.warning("b - ln(rho_plus) = %.6g <= epsilon_K; flooring at %.3g", gap, epsilon_K)
            gap = epsilon_K
            floored = True
        scale = b0p * math.exp(a)
        m_tau = 0.5 * scale * tau ** (1.0 - vartheta)
        K_tau = 2.0 * gap / scale * tau ** (vartheta - 1.0)
        return cls(vartheta, delta0, a, b, A, B0, b0p, tau, m_tau, K_tau, floored)

    @classmethod
    def from_density(cls, d: GridDensity, p: ModelParams, tau: float,
                     vartheta: float = DEFAULT_VARTHETA, delta0: float = 1.0,
                     epsilon_K: float = 1e-3, warn: bool = True) -> "PenaltyParams":
        """Read a, b, A, B0 off the cell values of ``d`` (slopes between neighbours)."""
        a, b, A, B0 = log_bounds(d)
        return cls.build(a, b, A, B0, p, tau, vartheta, delta0, epsilon_K, warn)


def log_bounds(d: GridDensity) -> tuple[float, float, float, float]:
    """(min ln rho, max ln rho, A, B0) from cell values and neighbour slopes."""
    lr = np.log(d.values)
    a, b = float(lr.min()), float(lr.max())
    if d.n_cells > 1:
        slopes = np.diff(lr) / d.h
        A = max(0.0, -float(slopes.min()))
        B0 = float(slopes.max())
    else:
        A, B0 = 0.0, 0.0
    return a, b, A, B0


def cumulative_mass(d: GridDensity, x) -> np.ndarray:
    """``int_0^x rho`` for the density extended by 1 beyond X."""
    x = np.asarray(x, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(d.values) * d.h))
    inside = np.interp(np.minimum(x, d.X), d.edges, cum)
    return inside + np.maximum(x - d.X, 0.0)


def remap(d: GridDensity, X_new: float, n_cells: int | None = None) -> GridDensity:
    """Conservative projection onto ``n_cells`` uniform cells of ``[0, X_new]``.

    The density is read as 1 beyond its own X, so lengthening the domain
    appends cells of value 1.
    """
    n = d.n_cells if n_cells is None else int(n_cells)
    edges = X_new * (np.arange(n + 1) / n)
    cm = cumulative_mass(d, edges)
    return GridDensity(X_new, np.diff(cm) / (X_new / n))


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    """Exact L1 distance of two cell densities, each extended by 1."""
    lam = max(a.X, b.X)
    pts = np.union1d(np.union1d(a.edges, b.edges), [lam])
    mids = 0.5 * (pts[:-1] + pts[1:])
    return float(np.sum(np.diff(pts) * np.abs(sample(a, mids) - sample(b, mids))))


def sample(d: GridDensity, x) -> np.ndarray:
    """Point values of the piecewise-constant density (1 beyond X)."""
    x = np.asarray(x, dtype=float)
    idx = np.clip(np.floor(x / d.h).astype(int), 0, d.n_cells - 1)
    return np.where(x < d.X, d.values[idx], 1.0)


@dataclass
class Trajectory:
    """Time-indexed states of one run, with the per-step reports that produced them."""

    params: ModelParams
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def initial(self) -> State:
        return self.states[0]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def interface(self) -> np.ndarray:
        return np.array([s.X for s in self.states])

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass_excess for s in self.states])

    def __len__(self):
        return len(self.states)
