import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jko_corrosion.core import GridDensity, ModelParams, l1_distance
from jko_corrosion.oracle_fd import (FREE, MINUS, PLUS, FDOptions, OracleFailure, OracleState,
                                     fd_step, interface_velocity, run_oracle)

P = ModelParams(1.0, 1.0, 0.2, 0.3)
FROZEN = FDOptions(freeze_interface=True)


def _state(values, X=1.0):
    return OracleState.from_density(0.0, GridDensity(X, np.asarray(values, float)))


def _affine(lo, hi, n, X=1.0):
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def test_constant_in_band_is_unchanged_when_frozen():
    s = _state(np.full(50, 0.5))
    for _ in range(20):
        s = fd_step(s, 1e-3, P, FROZEN)
    assert s.clamp == FREE
    assert np.max(np.abs(s.values - 0.5)) <= 1e-14


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1e-2))
def test_exchange_identity(seed, dt):
    rng = np.random.default_rng(seed)
    s = _state(rng.uniform(0.2, 1.5, 40), X=rng.uniform(0.5, 2.0))
    new = fd_step(s, dt, P)
    assert new.mass_excess == s.mass_excess - dt * new.flux0
    quad = new.X * float(np.mean(new.values - 1.0))
    assert abs(quad - new.mass_excess) <= 1e-10 * max(1.0, new.X)


@given(st.integers(0, 2**32 - 1))
def test_boundary_complementarity(seed):
    rng = np.random.default_rng(seed)
    s = _state(rng.uniform(0.1, 1.2, 30))
    for _ in range(10):
        s = fd_step(s, 2e-3, P)
        r0 = s.values[0]
        if s.clamp == PLUS:
            # the clamp sits at rho_+ half a cell out, with outflow
            assert s.flux0 >= 0.0 and r0 >= P.rho_plus - 1e-12
        elif s.clamp == MINUS:
            assert s.flux0 <= 0.0 and r0 <= P.rho_minus + 1e-12
        else:
            assert s.flux0 == 0.0
            assert P.rho_minus <= r0 <= P.rho_plus


def test_steady_linear_profile():
    m = 400
    s = _state(np.full(m, 0.5))
    opts = FDOptions(freeze_interface=True, right_dirichlet=1.0, left_dirichlet=P.rho_plus)
    traj = run_oracle(s, 5.0, 0.01, P, opts, sample_every=100)
    exact = GridDensity(1.0, _affine(P.rho_plus, 1.0, m))
    assert l1_distance(traj.states[-1].density, exact) < 1e-4


def test_zero_horizon_returns_initial_only():
    s = _state(np.full(10, 0.5))
    traj = run_oracle(s, 0.0, 1e-3, P)
    assert len(traj) == 1
    assert traj.states[0].density == GridDensity(1.0, np.full(10, 0.5))


def test_interface_ode_from_unit_density():
    s = _state(np.ones(400))
    T = 0.01
    traj = run_oracle(s, T, 1e-4, P, sample_every=100)
    expected = 1.0 + T * P.alpha / P.lam
    assert abs(traj.interface[-1] - expected) / expected < 1e-3


def test_interface_velocity_matches_law():
    assert interface_velocity(1.0, P) == pytest.approx(P.alpha / P.lam)
    assert interface_velocity(0.5, P) == pytest.approx((1.0 - 0.5 + math.log(2.0)) / P.lam)


def test_large_step_stays_bounded():
    # backward Euler with dt = 10 h^2 must not blow up or oscillate
    m = 100
    h = 1.0 / m
    s = _state(0.5 + 0.3 * np.cos(np.arange(m) * math.pi))
    lo, hi = s.values.min(), s.values.max()
    for _ in range(50):
        s = fd_step(s, 10 * h * h, P, FROZEN)
    assert np.all(np.isfinite(s.values))
    assert lo - 1e-12 <= s.values.min() and s.values.max() <= hi + 1e-12


def test_oracle_records_events():
    traj = run_oracle(_state(_affine(P.rho_plus + 0.1, 1.0, 50)), 0.05, 1e-3, P)
    kinds = [e["kind"] for e in traj.events]
    assert kinds[-1] == "conservation"
    assert traj.events[-1]["max_defect"] <= 1e-10
    assert "clamp" in kinds


def test_rejects_bad_inputs():
    s = _state(np.full(5, 0.5))
    with pytest.raises(ValueError):
        fd_step(s, 0.0, P)
    with pytest.raises(ValueError):
        run_oracle(s, -1.0, 1e-3, P)
    with pytest.raises(OracleFailure):
        OracleState(0.0, 1.0, np.array([0.5, -0.1]), 0.0)
    with pytest.raises(OracleFailure):
        OracleState(0.0, 1.0, np.full(4, 0.5), 0.0)
