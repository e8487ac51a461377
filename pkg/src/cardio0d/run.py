"""Run orchestration shared by the command line and the audit suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .circulation import (
    CirculationState,
    DerivedState,
    active_elastance,
    chamber_pressures,
    derived_state,
    rhs_full,
    total_blood_volume,
)
from .config import RunConfig
from .coupling import CouplingConfig, make_chamber, simulate_coupled
from .energy import (
    BalanceResidual,
    ClinicalEstimate,
    WorkSummary,
    balance_residual,
    clinical_work_estimate,
    dissipated_power,
    trajectory_energy,
    work_integrals,
)
from .params import CHAMBERS, COMPARTMENTS, ModelParams
from .timeloop import PeriodicResult, Trajectory, run_to_periodic, simulate

log = logging.getLogger(__name__)

WINDOW_PERIODIC_TOL = 1e-3


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    trajectory: Trajectory
    periodic: PeriodicResult | None
    summary: WorkSummary
    clinical: ClinicalEstimate | None
    balance: BalanceResidual

    def report_details(self):
        return {
            "clinical": self.clinical,
            "balance_summary": self.balance.summary,
            "periodic_beat": None if self.periodic is None else self.periodic.beat_index,
            "periodic_converged": None if self.periodic is None else self.periodic.converged,
        }


def coupling_config(config: RunConfig) -> CouplingConfig:
    sel = config.chamber
    options = {"p_min": sel.p_min, "p_max": sel.p_max}
    if sel.kind == "nonlinear":
        options.update(alpha=sel.alpha, beta=sel.beta, include_passive=sel.include_passive)
    chamber = make_chamber(sel.kind, config.params, **options)
    return CouplingConfig(chamber, tol=sel.tol, max_iter=sel.max_iter, window=sel.window)


def starting_point(config: RunConfig):
    """``(state, beat, periodic)`` at which the analysed window begins.

    With ``to_periodic`` the monolithic model is integrated until the
    periodic regime is detected (at most ``beats`` beats); otherwise the
    window is the last ``analyze_beats`` of a ``beats``-beat run, so the
    warm-up covers ``beats - analyze_beats`` beats.
    """
    params, solver = config.params, config.solver
    if config.to_periodic:
        search = replace(solver, max_beats=min(solver.max_beats, config.beats))
        periodic = run_to_periodic(params, config.initial_state, search)
        beat = periodic.beat_index if periodic.converged else search.max_beats
        return periodic.state, beat, periodic
    warmup = config.beats - config.analyze_beats
    if warmup == 0:
        return config.initial_state, 0, None
    if config.mode == "coupled":
        # the coupled model shares the monolithic limit cycle; warm up cheaply
        log.info("warming up %d beats with the monolithic model", warmup)
    traj = simulate(params, config.initial_state, warmup, solver, record_beats=0)
    return CirculationState.from_array(traj.beat_states[-1]), warmup, None


def execute(config: RunConfig) -> RunResult:
    """Simulate according to ``config`` and evaluate the energy ledger."""
    params, solver = config.params, config.solver
    state, beat, periodic = starting_point(config)
    t0 = beat * params.t_beat
    if config.mode == "coupled":
        traj = simulate_coupled(params, state, config.analyze_beats, solver,
                                coupling_config(config), t0=t0)
    else:
        traj = simulate(params, state, config.analyze_beats, solver, t0=t0)
    summary = work_integrals(traj, params, WINDOW_PERIODIC_TOL)
    clinical = None
    if summary.periodic:
        clinical = clinical_work_estimate(traj, params, WINDOW_PERIODIC_TOL, summary)
    else:
        log.warning("analysed window is not periodic (error %.3g); clinical estimates skipped",
                    summary.periodicity_error)
    return RunResult(config, traj, periodic, summary, clinical, balance_residual(traj, params))


# --- audits -----------------------------------------------------------------


@dataclass(frozen=True)
class AuditResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}  {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


def _rel(lhs, rhs, *scale):
    denom = np.maximum.reduce([np.abs(lhs), np.abs(rhs), *map(np.abs, scale), np.full_like(lhs, 1e-300)])
    return np.abs(lhs - rhs) / denom


def sub_balance_residuals(t, c1: CirculationState, params: ModelParams) -> dict:
    """Relative residuals of the per-compartment power identities.

    For array-valued states each entry is an array. Identities:

    * chamber: ``p (Q_in - Q_out) = dE/dt - P_act - P_ex``
    * valve: ``(p_up - p_down) Q = -P_valve``
    * compliance: ``p (Q_in - Q_out) = dE_vessel/dt``
    * inertance: ``(p_up - p_down) Q = dK/dt - P_vessel``
    """
    c2 = derived_state(t, c1, params)
    d = rhs_full(t, c1, c2, params)
    p = chamber_pressures(t, c1, params)
    p_ex = params.p_ex.at(t)
    valves, vessels = dissipated_power(t, c1, c2, params)
    out = {}
    vol = {"la": "v_la", "lv": "v_lv", "ra": "v_ra", "rv": "v_rv"}
    for name in CHAMBERS:
        ch = params.chambers[name]
        x = getattr(c1, vol[name]) - ch.v0
        dv = getattr(d, vol[name])
        de = ch.e_pass * x * dv
        p_act = -active_elastance(ch, t, params.t_beat) * x * dv
        p_exn = -p_ex * dv
        out[f"chamber_{name}"] = _rel(p[name] * dv, de - p_act - p_exn, de, p_act, p_exn)
    pairs = {
        "mv": (c2.p_la, c2.p_lv, c2.q_mv),
        "av": (c2.p_lv, c1.p_ar_sys, c2.q_av),
        "tv": (c2.p_ra, c2.p_rv, c2.q_tv),
        "pv": (c2.p_rv, c1.p_ar_pul, c2.q_pv),
    }
    for name, (up, down, q) in pairs.items():
        out[f"valve_{name}"] = _rel((up - down) * q, -valves[name])
    inflow = {"ar_sys": c2.q_av, "ven_sys": c1.q_ar_sys, "ar_pul": c2.q_pv, "ven_pul": c1.q_ar_pul}
    downstream = {"ar_sys": c1.p_ven_sys, "ven_sys": c2.p_ra, "ar_pul": c1.p_ven_pul, "ven_pul": c2.p_la}
    for k in COMPARTMENTS:
        comp = params.compartments[k]
        pk = getattr(c1, f"p_{k}")
        qk = getattr(c1, f"q_{k}")
        de = comp.c * pk * getattr(d, f"p_{k}")
        out[f"compliance_{k}"] = _rel(pk * (inflow[k] - qk), de)
        dk = comp.l * qk * getattr(d, f"q_{k}")
        out[f"inertance_{k}"] = _rel((pk - downstream[k]) * qk, dk - vessels[k], dk, vessels[k])
    return out


def random_states(params: ModelParams, n: int, seed: int = 0):
    """``(t, c1)`` with ``n`` random physiological-range states (array fields)."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, params.t_beat, n)
    c1 = CirculationState(
        v_la=rng.uniform(10, 150, n), v_lv=rng.uniform(20, 250, n),
        v_ra=rng.uniform(10, 150, n), v_rv=rng.uniform(20, 250, n),
        p_ar_sys=rng.uniform(20, 160, n), p_ven_sys=rng.uniform(0, 40, n),
        p_ar_pul=rng.uniform(5, 50, n), p_ven_pul=rng.uniform(0, 30, n),
        q_ar_sys=rng.uniform(-200, 600, n), q_ven_sys=rng.uniform(-200, 600, n),
        q_ar_pul=rng.uniform(-200, 600, n), q_ven_pul=rng.uniform(-200, 600, n),
    )
    return t, c1


def audit_run(result: RunResult) -> list[AuditResult]:
    """Invariant checks on a finished run."""
    traj, params = result.trajectory, result.config.params
    out = []
    vol = total_blood_volume(traj.states, params)
    drift = float(np.max(np.abs(vol - vol[0])) / abs(vol[0])) / max(result.summary.n_beats, 1)
    out.append(AuditResult("blood volume drift per beat", drift, 1e-10, drift <= 1e-10))
    out.append(AuditResult("energy balance residual", result.balance.summary, 1e-3,
                           result.balance.summary <= 1e-3))
    if result.summary.w_act != 0.0:
        ratio = abs(result.summary.balance_ratio)
        out.append(AuditResult("periodic work balance |W_act + W_diss| / W_act", ratio, 1e-2,
                               ratio <= 1e-2 and result.summary.periodic))
    snap = trajectory_energy(traj, params)
    worst = max(float(np.max(v)) for v in snap.dissipation_terms().values())
    out.append(AuditResult("max dissipation subterm", worst, 0.0, worst <= 0.0))
    t, c1 = random_states(params, 1000)
    res = max(float(np.max(r)) for r in sub_balance_residuals(t, c1, params).values())
    out.append(AuditResult("sub-balance identities (1000 states)", res, 1e-12, res <= 1e-12))
    return out


def audit_coupling(config: RunConfig, state: CirculationState, beat: int) -> list[AuditResult]:
    """One coupled beat with the reference elastance chamber against the monolithic beat."""
    params, solver = config.params, config.solver
    t0 = beat * params.t_beat
    mono = simulate(params, state, 1, solver, t0=t0)
    cc = coupling_config(replace(config, chamber=replace(config.chamber, kind="elastance")))
    cpl = simulate_coupled(params, state, 1, solver, cc, t0=t0)
    m, c = mono.states, cpl.states
    dv = float(np.max(np.abs(c.v_lv - m.v_lv)) / np.max(np.abs(m.v_lv)))
    mp, cp = DerivedState.from_array(mono.c2).p_lv, DerivedState.from_array(cpl.c2).p_lv
    dp = float(np.max(np.abs(cp - mp)) / np.max(np.abs(mp)))
    res = float(np.max(np.abs(cpl.extras["constraint_residual"])))
    return [
        AuditResult("coupled vs monolithic V_lv", dv, 1e-3, dv <= 1e-3),
        AuditResult("coupled vs monolithic p_lv", dp, 1e-3, dp <= 1e-3),
        AuditResult("coupling constraint residual [mL]", res, max(cc.tol, 1e-8),
                    res <= max(cc.tol, 1e-8)),
    ]
