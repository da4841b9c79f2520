import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jko_corrosion.core import GridDensity, ModelParams, PenaltyParams, State, Trajectory, lyapunov
from jko_corrosion.diagnostics import (DiagnosticsLedger, bounds_check, hstar_norm,
                                       time_translate, trace_band_sum, vi_check, weak_residuals)

P = ModelParams(1.0, 1.0, 0.2, 0.3)


def _linear_traj(a, s, n=200, steps=10, tau=0.01, X=1.0, p=P):
    x = (np.arange(n) + 0.5) / n * X
    d = GridDensity(X, a + s * x)
    return Trajectory(p, [State.from_density(k * tau, d) for k in range(steps + 1)])


def _pp(d, tau=0.01):
    return PenaltyParams.from_density(d, P, tau, warn=False)


# ledger


def test_ledger_with_zero_steps():
    s = State.from_density(0.0, GridDensity(1.0, np.full(10, 0.5)))
    led = DiagnosticsLedger.start(s, P)
    assert led.dissipation_sum == 0.0 and led.steps == 0
    assert led.lyapunov_series == [lyapunov(s, P)]
    assert led.lyapunov_increments().size == 0
    assert led.interface_bound == 1.0
    assert led.apriori_margin == pytest.approx(led.initial_entropy + P.growth_constant)


def test_ledger_accumulates_on_the_default_run(default_run):
    traj, led, code, _ = default_run
    assert led.steps == len(traj) - 1 == 100
    assert len(led.lyapunov_series) == len(traj)
    assert np.all(led.lyapunov_increments() <= 1e-12)
    assert led.apriori_margin > 0.0
    assert traj.interface[-1] <= led.interface_bound
    assert len(led.channel_bulk) == len(led.channel_interface) == len(led.channel_boundary) == 100


# bounds


def test_bounds_check_clean_state():
    d = GridDensity(1.0, np.full(20, 0.5))
    pp = PenaltyParams.build(math.log(0.4), math.log(0.6), 0.1, 0.1, P, 0.01, warn=False)
    assert bounds_check(State.from_density(0.0, d), pp) == []


def test_bounds_check_flags_each_kind():
    pp = PenaltyParams.build(math.log(0.4), math.log(0.6), 0.1, 0.1, P, 0.01, warn=False)
    v = np.full(20, 0.5)
    v[3] = 0.9
    v[15] = 0.2
    found = bounds_check(State.from_density(0.0, GridDensity(1.0, v)), pp)
    kinds = {x.kind for x in found}
    assert kinds == {"upper-log-bound", "lower-log-bound", "upper-slope-bound", "lower-slope-bound"}
    up = next(x for x in found if x.kind == "upper-log-bound")
    assert up.cell == 3 and up.magnitude == pytest.approx(math.log(0.9) - math.log(0.6))


def test_bounds_check_tolerance_and_override():
    pp = PenaltyParams.build(math.log(0.4), math.log(0.6), 10.0, 10.0, P, 0.01, warn=False)
    v = np.full(4, 0.6 * math.exp(5e-4))
    s = State.from_density(0.0, GridDensity(1.0, v))
    assert bounds_check(s, pp) == []
    assert [x.kind for x in bounds_check(s, pp, tol=1e-4)] == ["upper-log-bound"] * 4
    assert bounds_check(s, pp, tol=1e-4, upper=0.0) == []


# trace band sum


def test_trace_band_sum_hand_value():
    v = np.full(8, 0.5)
    states = [State.from_density(0.0, GridDensity(1.0, v))]
    excess = [0.0, 0.2, 0.1]
    for k, e in enumerate(excess, start=1):
        w = v.copy()
        w[0] = P.rho_plus * math.exp(e)
        states.append(State.from_density(0.01 * k, GridDensity(1.0, w)))
    traj = Trajectory(P, states)
    assert trace_band_sum(traj) == pytest.approx(0.01 * (0.04 + 0.01), rel=1e-12)


def test_trace_band_sum_ignores_initial_state():
    traj = _linear_traj(0.9, 0.0, steps=0)
    assert trace_band_sum(traj) == 0.0


# dual norm


@pytest.mark.parametrize("k", [1, 2, 3])
def test_hstar_norm_cosine_closed_form(k):
    L = 2.0
    errs = []
    for n in (64, 128, 256):
        x = (np.arange(n) + 0.5) * L / n
        w = np.cos(k * math.pi * x / L)
        exact = math.sqrt(0.5 * L / (1.0 + (k * math.pi / L) ** 2))
        errs.append(abs(hstar_norm(w, L) - exact))
    assert errs[-1] < 1e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_hstar_norm_of_constant_equals_l2():
    assert hstar_norm(np.full(50, 2.0), 3.0) == pytest.approx(2.0 * math.sqrt(3.0), rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(-3.0, 3.0))
def test_hstar_norm_is_a_norm(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=40), rng.normal(size=40)
    assert hstar_norm(c * a, 1.5) == pytest.approx(abs(c) * hstar_norm(a, 1.5), rel=1e-10, abs=1e-14)
    assert hstar_norm(a + b, 1.5) <= hstar_norm(a, 1.5) + hstar_norm(b, 1.5) + 1e-12
    # dominated by the L2 norm
    assert hstar_norm(a, 1.5) <= math.sqrt(1.5 / 40 * np.dot(a, a)) + 1e-12


def test_time_translate_static_is_zero():
    tt = time_translate(_linear_traj(0.5, 0.1))
    assert tt.integral == 0.0 and tt.series_norm == 0.0 and tt.n_steps == 10


# weak residuals


def test_weak_residuals_static_flat_state():
    # rho = 1 with X moving at alpha / lambda solves both weak equations exactly
    tau, n = 0.01, 50
    states = [State.from_density(k * tau, GridDensity(1.0 + k * tau * P.alpha / P.lam, np.ones(n)))
              for k in range(11)]
    rep = weak_residuals(Trajectory(P, states))
    # only the fixed-order Gauss rule on differently placed breaks remains
    assert rep.max_rho <= 1e-8
    assert rep.max_x <= 1e-13


def test_weak_residuals_detect_wrong_interface_speed():
    tau, n = 0.01, 50
    states = [State.from_density(k * tau, GridDensity(1.0 + 2 * k * tau, np.ones(n))) for k in range(11)]
    rep = weak_residuals(Trajectory(P, states))
    assert rep.max_x > 1e-3


def test_weak_residuals_on_default_run(default_run):
    rep = weak_residuals(default_run[0])
    assert rep.max_rho <= 1e-3
    assert rep.max_x <= 1e-10


def test_weak_residuals_need_two_states():
    with pytest.raises(ValueError):
        weak_residuals(_linear_traj(0.5, 0.0, steps=0))


# variational inequality


def test_vi_margins_vanish_for_constant_state():
    traj = _linear_traj(0.5, 0.0)
    m = vi_check(traj, np.linspace(P.rho_minus, P.rho_plus, 5))
    assert np.max(np.abs(m)) <= 1e-14


@pytest.mark.parametrize("a,s", [(P.rho_plus, 0.2), (P.rho_minus, -0.2)])
def test_vi_holds_when_flux_matches_trace(a, s):
    # a linear profile is a steady heat solution with boundary flux s
    for n in (100, 400):
        m = vi_check(_linear_traj(a, s, n), np.linspace(P.rho_minus, P.rho_plus, 5))
        assert m.min() >= 0.0


@pytest.mark.parametrize("a,s", [(0.5, 0.2), (0.5, -0.2), (P.rho_plus, -0.2), (P.rho_minus, 0.2)])
def test_vi_detects_wrong_flux(a, s):
    m = vi_check(_linear_traj(a, s), np.linspace(P.rho_minus, P.rho_plus, 5))
    assert m.min() < -1e-4


def test_vi_with_frozen_eta_path():
    traj = _linear_traj(P.rho_plus, 0.2)
    path = np.full(len(traj), 0.5 * (P.rho_minus + P.rho_plus))
    assert np.allclose(vi_check(traj, eta_paths=[path]), vi_check(traj, [path[0]]), atol=1e-15)


def test_vi_no_eta_gives_no_margins():
    assert vi_check(_linear_traj(0.5, 0.0)).size == 0


def test_vi_rejects_eta_outside_band():
    traj = _linear_traj(0.5, 0.0)
    with pytest.raises(ValueError):
        vi_check(traj, [P.rho_plus + 0.01])
    with pytest.raises(ValueError):
        vi_check(traj, eta_paths=[np.full(3, 0.5)])
