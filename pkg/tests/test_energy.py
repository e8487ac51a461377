"""Energy ledger: storage and power terms, balances and work estimators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardio0d.circulation import CirculationState, default_initial_state, derived_state, rhs
from cardio0d.energy import (
    COUPLED,
    ClinicalEstimate,
    balance_residual,
    clinical_work_estimate,
    daily_kj,
    energy_snapshot,
    is_periodic,
    mean_pressure_power,
    smooth_phase_residual,
    work_integrals,
)
from cardio0d.errors import NonPeriodicError
from cardio0d.params import MMHG_ML_TO_J, ExternalPressure, physiological_default
from cardio0d.run import random_states, sub_balance_residuals
from cardio0d.timeloop import SolverConfig, simulate

P = physiological_default()


def hand_state():
    return CirculationState(
        v_la=54.0, v_lv=105.0, v_ra=44.0, v_rv=110.0,
        p_ar_sys=100.0, p_ven_sys=10.0, p_ar_pul=20.0, p_ven_pul=8.0,
        q_ar_sys=80.0, q_ven_sys=70.0, q_ar_pul=60.0, q_ven_pul=50.0,
    )


def test_snapshot_by_hand():
    t, c1 = 0.14, hand_state()
    c2 = derived_state(t, c1, P)
    dv_lv = c2.q_mv - c2.q_av
    s = energy_snapshot(t, c1, c2, P)
    assert s.elastic_chamber["lv"] == pytest.approx(0.5 * 0.08 * 100.0 ** 2)
    assert s.elastic_chamber["la"] == pytest.approx(0.5 * 0.09 * 50.0 ** 2)
    assert s.elastic_vessel["ar_sys"] == pytest.approx(0.5 * 1.4 * 100.0 ** 2)
    assert s.kinetic["ar_sys"] == pytest.approx(0.5 * 5e-3 * 80.0 ** 2)
    assert s.active["lv"] == pytest.approx(-2.75 * 0.5 * 100.0 * dv_lv)
    assert s.active["la"] == 0.0  # atria at rest at t = 0.14 s
    assert s.dissipation_vessel["ar_sys"] == pytest.approx(-6400.0)
    assert s.dissipation_valve["av"] == pytest.approx(-(45.5 ** 2) / 0.0075)
    assert s.dissipation_valve["mv"] == pytest.approx(-(141.0 ** 2) / 75006.2)
    assert all(v == 0.0 for v in s.external.values())


def test_coupled_mode_moves_lv_terms_to_the_boundary():
    t, c1 = 0.14, hand_state()
    c2 = derived_state(t, c1, P)
    mono = energy_snapshot(t, c1, c2, P)
    cpl = energy_snapshot(t, c1, c2, P, COUPLED)
    assert cpl.elastic_chamber["lv"] == 0.0 and cpl.external["lv"] == 0.0
    assert cpl.active["lv"] == pytest.approx(c2.p_lv * (c2.q_av - c2.q_mv))
    # the boundary term carries the passive and active LV items together
    assert cpl.active["lv"] == pytest.approx(
        mono.active["lv"] - 0.08 * 100.0 * (c2.q_mv - c2.q_av))
    for k in ("la", "ra", "rv"):
        assert cpl.active[k] == mono.active[k]


def _mechanical_rate(t, c1, p):
    """``dM/dt`` by the chain rule on the storage definitions."""
    r = rhs(t, c1, p)
    out = 0.0
    for name, v, dv in (("la", c1.v_la, r.v_la), ("lv", c1.v_lv, r.v_lv),
                        ("ra", c1.v_ra, r.v_ra), ("rv", c1.v_rv, r.v_rv)):
        ch = p.chambers[name]
        out = out + ch.e_pass * (v - ch.v0) * dv
    for k in ("ar_sys", "ven_sys", "ar_pul", "ven_pul"):
        comp = p.compartments[k]
        out = out + comp.c * getattr(c1, f"p_{k}") * getattr(r, f"p_{k}")
        out = out + comp.l * getattr(c1, f"q_{k}") * getattr(r, f"q_{k}")
    return out


@pytest.mark.parametrize("p_ex", [ExternalPressure(), ExternalPressure(4.0),
                                  ExternalPressure(-2.0, 3.0, 0.37)])
def test_pointwise_power_balance(p_ex):
    p = type(P)(P.chambers, P.valves, P.compartments, P.t_beat, p_ex)
    t, c1 = random_states(p, 2000, seed=3)
    s = energy_snapshot(t, c1, derived_state(t, c1, p), p)
    lhs = _mechanical_rate(t, c1, p)
    rhs_ = s.active_total + s.dissipation_total + s.external_total
    scale = np.abs(s.dissipation_total) + np.abs(s.active_total) + np.abs(lhs)
    assert np.all(np.abs(lhs - rhs_) <= 1e-12 * scale)


def test_sub_balance_audit_on_random_states():
    t, c1 = random_states(P, 1500, seed=11)
    res = sub_balance_residuals(t, c1, P)
    assert len(res) == 16
    assert max(float(np.max(v)) for v in res.values()) <= 1e-12


@settings(max_examples=200)
@given(st.integers(0, 2 ** 31 - 1))
def test_dissipation_terms_nonpositive(seed):
    t, c1 = random_states(P, 20, seed=seed)
    s = energy_snapshot(t, c1, derived_state(t, c1, P), P)
    for v in s.dissipation_terms().values():
        assert np.all(v <= 0.0)


def test_balance_residual_small_on_periodic_beat(periodic_beat):
    b = balance_residual(periodic_beat.beat, periodic_beat.params)
    assert b.summary <= 1e-3
    assert b.dissipation_integral > 0
    assert b.residual[0] == 0.0


def test_stride_halving_shrinks_smooth_phase_residual(periodic_beat):
    p = periodic_beat.params
    r1 = smooth_phase_residual(periodic_beat.beat, p, stride=1)
    r2 = smooth_phase_residual(periodic_beat.beat, p, stride=2)
    r4 = smooth_phase_residual(periodic_beat.beat, p, stride=4)
    assert r2 / r1 == pytest.approx(4.0, rel=0.1)
    assert r4 / r2 == pytest.approx(4.0, rel=0.1)


def test_balance_with_constant_external_pressure(periodic_beat):
    p = type(P)(P.chambers, P.valves, P.compartments, P.t_beat, ExternalPressure(5.0))
    traj = simulate(p, periodic_beat.periodic.state, 1, SolverConfig(), t0=periodic_beat.t0)
    assert balance_residual(traj, p).summary <= 1e-3
    snap_ex = [v for v in energy_snapshot(traj.t, traj.states, traj.derived, p).external.values()]
    assert any(np.any(v != 0.0) for v in snap_ex)


def test_work_summary_on_periodic_beat(periodic_beat):
    s = work_integrals(periodic_beat.beat, periodic_beat.params)
    assert s.periodic and s.n_beats == 1
    assert s.w_act > 0 > s.w_diss
    assert abs(s.balance_ratio) <= 1e-2
    assert s.w_act == pytest.approx(sum(s.w_act_chamber.values()))
    assert s.w_act_chamber["lv"] > s.w_act_chamber["rv"] > s.w_act_chamber["la"]
    assert s.mean_active_power == pytest.approx(s.w_act * MMHG_ML_TO_J / 0.8)
    assert s.daily_work_kj == pytest.approx(s.mean_active_power * 86.4)
    assert sum(s.daily_work_chamber_kj.values()) == pytest.approx(s.daily_work_kj)


def test_work_integrals_need_whole_beats(periodic_beat):
    with pytest.raises(ValueError):
        work_integrals(periodic_beat.beat.window(0, 3000), periodic_beat.params)


def test_passive_heart_at_rest_does_no_work():
    passive = P
    for name in ("la", "lv", "ra", "rv"):
        passive = passive.with_chamber(name, e_act_max=0.0)
    p0 = 10.0
    vols = {k: passive.chambers[k].v0 + p0 / passive.chambers[k].e_pass for k in ("la", "lv", "ra", "rv")}
    rest = CirculationState(vols["la"], vols["lv"], vols["ra"], vols["rv"],
                            p0, p0, p0, p0, 0.0, 0.0, 0.0, 0.0)
    traj = simulate(passive, rest, 1, SolverConfig(dt=4e-4))
    s = work_integrals(traj, passive)
    assert s.w_act == 0.0 and s.w_diss == 0.0 and s.balance_ratio == 0.0
    np.testing.assert_array_equal(traj.c1[-1], traj.c1[0])


def test_daily_conversion():
    assert daily_kj(1.0) == pytest.approx(1.33322e-4 * 86400 / 1000)
    assert mean_pressure_power(100.0, 70.0, 0.8) == pytest.approx(8750.0)


def test_clinical_estimate_fields():
    est = ClinicalEstimate(p_mean=100.0, p_max=120.0, p_min=80.0, stroke_volume=70.0, t_beat=0.8,
                           model_power_total=10000.0, model_power_lv=8000.0)
    assert est.p_mean_clinical == pytest.approx(120 / 3 + 160 / 3)
    assert est.power_true_mean == pytest.approx(8750.0)
    assert est.error_true_mean_total == pytest.approx(-0.125)
    assert est.error_true_mean_lv == pytest.approx(8750 / 8000 - 1)
    assert est.error_clinical_mean_total < est.error_true_mean_total


def test_clinical_estimate_requires_periodic_window(params):
    traj = simulate(params, default_initial_state(), 1, SolverConfig(dt=4e-4))
    assert not is_periodic(traj, 1e-3)[0]
    with pytest.raises(NonPeriodicError):
        clinical_work_estimate(traj, params)
