"""Volume-constraint coupling of an external LV chamber."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from cardio0d.circulation import DerivedState, default_initial_state, elastance_at
from cardio0d.coupling import (
    CoupledState,
    CouplingConfig,
    ElastanceChamber,
    boundary_work,
    coupling_residual,
    initial_coupled_state,
    make_chamber,
    nonlinear_test_chamber,
    simulate_coupled,
    solve_coupled_step,
    solve_decreasing,
)
from cardio0d.energy import trajectory_energy, valve_switch_cells
from cardio0d.errors import ChamberError, ConfigError, CouplingConvergenceError, CouplingError
from cardio0d.params import ChamberParams, physiological_default
from cardio0d.timeloop import SolverConfig

P = physiological_default()
LV = P.chambers["lv"]


# --- scalar root finder ------------------------------------------------------


@settings(max_examples=100)
@given(st.floats(-40, 900), st.floats(0.01, 100), st.floats(-40, 900))
def test_solver_finds_root_of_decreasing_function(root, slope, start):
    p, r, _ = solve_decreasing(lambda x: slope * (root - x) + 1e-3 * math.atan(root - x),
                               start, -50.0, 1000.0, 1e-9)
    assert abs(r) <= 1e-9
    assert p == pytest.approx(root, abs=1e-9 / slope + 1e-9)


def test_solver_passes_payload_through():
    p, payload, _ = solve_decreasing(lambda x: (2.0 - x, "tag"), 0.0, -10, 10, 1e-12)
    assert payload == (2.0 - p, "tag") and p == pytest.approx(2.0)


def test_solver_reports_unbracketable_root():
    with pytest.raises(CouplingError) as exc:
        solve_decreasing(lambda x: 5.0 - 1e-9 * x, 0.0, -50.0, 1000.0, 1e-8, t=0.3)
    assert exc.value.residuals[0] > 0 and exc.value.residuals[1] > 0
    assert exc.value.t == 0.3


def test_solver_iteration_cap():
    # a step function never meets the tolerance; bisection stalls at the jump
    with pytest.raises(CouplingConvergenceError):
        solve_decreasing(lambda x: 1.0 if x < 1.2345 else -1.0, 0.0, -10, 10, 1e-8, max_iter=30)


# --- chambers ----------------------------------------------------------------


def test_elastance_chamber_inverts_elastance_law():
    ch = ElastanceChamber(LV, P.t_beat)
    for t in np.linspace(0, 0.8, 17):
        v = ch.volume_at(50.0, t)
        assert 50.0 == pytest.approx(elastance_at(LV, t, P.t_beat) * (v - LV.v0))


@settings(max_examples=200)
@given(st.floats(0.0, 0.8), st.floats(-40.0, 400.0))
def test_nonlinear_chamber_round_trip(t, p):
    ch = nonlinear_test_chamber(LV, P.t_beat)
    if p < ch.p_min:
        return
    v = ch.volume_at(p, t)
    assert ch.pressure_at(v, t) == pytest.approx(p, abs=1e-10 * max(1.0, abs(p)))


def test_nonlinear_chamber_monotone_in_pressure():
    ch = nonlinear_test_chamber(LV, P.t_beat)
    ps = np.linspace(ch.p_min + 1e-3, 300, 200)
    for t in (0.0, 0.2, 0.5):
        vols = [ch.volume_at(p, t) for p in ps]
        assert np.all(np.diff(vols) > 0)


def test_nonlinear_chamber_small_alpha_limit():
    # at fixed (physiological) strain the exponential term vanishes linearly in alpha
    ref = ElastanceChamber(LV, P.t_beat)
    points = [(p, t) for p in (2.0, 5.0, 10.0, 60.0, 120.0) for t in (0.1, 0.2, 0.5)
              if ref.volume_at(p, t) - LV.v0 < 150.0]
    assert len(points) >= 6
    errs = []
    for alpha in (1e-2, 1e-3, 1e-4):
        ch = nonlinear_test_chamber(LV, P.t_beat, alpha=alpha, include_passive=True)
        errs.append(max(abs(ch.volume_at(p, t) - ref.volume_at(p, t)) for p, t in points))
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.02)
    assert errs[2] < 0.05  # mL


def test_nonlinear_chamber_failure_is_reported():
    ch = nonlinear_test_chamber(LV, P.t_beat, max_strain=10.0)
    with pytest.raises(ChamberError) as exc:
        ch.volume_at(900.0, 0.5)
    assert exc.value.p_lv == 900.0


def test_unknown_chamber_kind():
    with pytest.raises(ConfigError):
        make_chamber("spherical", P)


# --- coupled step ------------------------------------------------------------


@pytest.fixture
def state0():
    cc = CouplingConfig(make_chamber("elastance", P))
    return cc, initial_coupled_state(0.0, default_initial_state(), P, cc)


def test_initial_state_matches_volume(state0):
    cc, s = state0
    assert abs(s.residual) <= cc.tol
    assert s.p_lv == pytest.approx(elastance_at(LV, 0.0, P.t_beat) * (120.0 - LV.v0), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(-40.0, 900.0))
def test_zero_step_residual_does_not_depend_on_pressure(p):
    cc = CouplingConfig(make_chamber("elastance", P))
    s = initial_coupled_state(0.0, default_initial_state(), P, cc)
    r = coupling_residual(0.0, 0.0, s, p, P, cc)
    assert r == s.residual


def test_residual_decreasing_in_pressure(state0):
    cc, s = state0
    rs = [coupling_residual(0.0, 1e-4, s, p, P, cc) for p in np.linspace(-40, 500, 50)]
    assert np.all(np.diff(rs) < 0)


def test_residual_rejects_out_of_range_pressure(state0):
    cc, s = state0
    with pytest.raises(ValueError):
        coupling_residual(0.0, 1e-4, s, 2000.0, P, cc)


def test_coupled_step_enforces_constraint(state0):
    cc, s = state0
    for n in range(20):
        s = solve_coupled_step(n * 1e-4, s, 1e-4, P, cc)
        assert abs(s.residual) <= cc.tol
        assert s.c1.v_lv == pytest.approx(cc.chamber.volume(s.chamber_state), abs=cc.tol)


def test_infinitely_stiff_chamber_cannot_be_bracketed():
    rigid = ChamberParams(e_pass=1e12, e_act_max=0.0, v0=LV.v0, t_onset=0.0,
                          t_contract=0.28, t_relax=0.12)
    cc = CouplingConfig(ElastanceChamber(rigid, P.t_beat))
    c1 = default_initial_state()
    s = CoupledState(0.0, c1, cc.chamber.initial_state(0.0, 100.0), 100.0)
    with pytest.raises(CouplingError) as exc:
        solve_coupled_step(0.0, s, 1e-4, P, cc)
    lo, hi = exc.value.residuals
    assert lo > 0 and hi > 0  # the 0D volume exceeds the rigid chamber for every pressure


def test_coupled_trajectory_records_extras(coupled_elastance):
    tr = coupled_elastance
    assert tr.mode == "coupled"
    n = len(tr)
    assert {k: len(v) for k, v in tr.extras.items()} == {
        "chamber_volume": n, "constraint_residual": n, "iterations": n}
    assert np.max(np.abs(tr.extras["constraint_residual"])) <= 1e-8
    np.testing.assert_allclose(tr.states.v_lv, tr.extras["chamber_volume"], atol=1e-8)


def test_coupled_run_short_smoke():
    cc = CouplingConfig(make_chamber("nonlinear", P))
    tr = simulate_coupled(P, default_initial_state(), 1, SolverConfig(dt=4e-4), cc, record_beats=1)
    assert tr.n_beats == 1 and np.all(np.isfinite(tr.c1))


def test_multiplier_varies_smoothly_between_switches(coupled_elastance, periodic_beat):
    # on switch-free steps the change in p_lv stays proportional to dt: it
    # tracks the monolithic LV pressure increments
    p_c = DerivedState.from_array(coupled_elastance.c2).p_lv
    p_m = DerivedState.from_array(periodic_beat.beat.c2).p_lv
    smooth = np.ones(len(p_c) - 1, dtype=bool)
    for cells in (valve_switch_cells(coupled_elastance), valve_switch_cells(periodic_beat.beat)):
        smooth[cells] = False
    dc, dm = np.diff(p_c)[smooth], np.diff(p_m)[smooth]
    assert np.max(np.abs(dc - dm)) <= 1e-3 * np.max(np.abs(dm))


def test_boundary_power_identity(coupled_elastance, coupled_nonlinear, params):
    for tr in (coupled_elastance, coupled_nonlinear):
        bw = boundary_work(tr)
        diss = trapezoid(np.abs(trajectory_energy(tr, params).dissipation_total), tr.t)
        assert abs(bw.mismatch) <= 1e-3 * diss


def test_boundary_work_needs_coupled_trajectory(periodic_beat):
    with pytest.raises(ValueError):
        boundary_work(periodic_beat.beat)
