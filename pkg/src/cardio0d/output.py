"""Time-series CSV and energy report serialization.

CSV contract
------------
Comma separated, LF line endings, one header row, every number printed with
:data:`SIG_DIGITS` significant digits in exponent notation. Columns, in
order (see :func:`timeseries_columns`):

* ``t``
* the 12 differential components (``v_la`` ... ``q_ven_pul``)
* the 8 derived components (``p_lv`` ... ``q_pv``)
* storage terms ``E_chamber_<c>``, ``E_vessel_<k>``, ``K_<k>`` and their sum ``M``
* power terms ``P_act_<c>``, ``P_ex_<c>``, ``P_diss_valve_<v>``,
  ``P_diss_vessel_<k>`` and the totals ``P_act``, ``P_ex``, ``P_diss``

with ``<c>`` in la, lv, ra, rv; ``<v>`` in mv, av, tv, pv; ``<k>`` in
ar_sys, ven_sys, ar_pul, ven_pul. Energies are mmHg*mL, powers mmHg*mL/s.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .circulation import CirculationState, DerivedState
from .energy import REFERENCE_ANCHORS, ClinicalEstimate, WorkSummary, daily_kj, trajectory_energy
from .params import CHAMBERS, COMPARTMENTS, VALVES, ModelParams
from .timeloop import Trajectory

SIG_DIGITS = 10
WORK_BALANCE_THRESHOLD = 0.01

_ENERGY_COLUMNS = (
    tuple(f"E_chamber_{c}" for c in CHAMBERS)
    + tuple(f"E_vessel_{k}" for k in COMPARTMENTS)
    + tuple(f"K_{k}" for k in COMPARTMENTS)
    + ("M",)
    + tuple(f"P_act_{c}" for c in CHAMBERS)
    + tuple(f"P_ex_{c}" for c in CHAMBERS)
    + tuple(f"P_diss_valve_{v}" for v in VALVES)
    + tuple(f"P_diss_vessel_{k}" for k in COMPARTMENTS)
    + ("P_act", "P_ex", "P_diss")
)


def timeseries_columns():
    """The column names, in file order."""
    return ("t",) + CirculationState.names() + DerivedState.names() + _ENERGY_COLUMNS


def _fmt(x):
    return f"{x + 0.0:.{SIG_DIGITS - 1}e}"


def timeseries_table(traj: Trajectory, params: ModelParams) -> np.ndarray:
    """``(n, n_columns)`` array matching :func:`timeseries_columns`."""
    n = len(traj.t)
    if n == 0:
        return np.empty((0, len(timeseries_columns())))
    snap = trajectory_energy(traj, params)
    energy = (
        [snap.elastic_chamber[c] for c in CHAMBERS]
        + [snap.elastic_vessel[k] for k in COMPARTMENTS]
        + [snap.kinetic[k] for k in COMPARTMENTS]
        + [snap.mechanical]
        + [snap.active[c] for c in CHAMBERS]
        + [snap.external[c] for c in CHAMBERS]
        + [snap.dissipation_valve[v] for v in VALVES]
        + [snap.dissipation_vessel[k] for k in COMPARTMENTS]
        + [snap.active_total, snap.external_total, snap.dissipation_total]
    )
    energy = np.column_stack([np.broadcast_to(np.asarray(e, dtype=float), (n,)) for e in energy])
    return np.column_stack([traj.t, traj.c1, traj.c2, energy])


def write_timeseries(traj: Trajectory, params: ModelParams, path) -> Path:
    """Write the trajectory and all energy/power terms as CSV."""
    path = Path(path)
    table = timeseries_table(traj, params)
    try:
        with path.open("w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(timeseries_columns())
            for row in table:
                writer.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write time series to {path}: {exc.strerror}") from None
    return path


def read_timeseries(path):
    """``(columns, table)`` from a file written by :func:`write_timeseries`."""
    with Path(path).open(encoding="ascii", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = tuple(rows[0])
    table = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    return header, table.reshape(len(rows) - 1, len(header))


def _clean(x):
    """JSON-safe float: ``-0.0`` -> ``0.0``, non-finite -> ``None``."""
    if x is None:
        return None
    x = float(x) + 0.0
    return x if math.isfinite(x) else None


def report_dict(summary: WorkSummary, clinical: ClinicalEstimate | None = None,
                balance_summary: float | None = None, periodic_beat: int | None = None,
                periodic_converged: bool | None = None) -> dict:
    """Structured report; see the README for the key set.

    A run without active work (passive heart) reports every work term as 0
    and leaves the balance check and the estimator errors undefined
    (``None``) rather than flagging them as failures.
    """
    passive = summary.w_act == 0.0
    ratio = None if passive else summary.balance_ratio
    chamber_kj = summary.daily_work_chamber_kj
    out = {
        "mode": summary.mode,
        "n_beats": summary.n_beats,
        "duration_s": _clean(summary.duration),
        "periodicity": {
            "converged": periodic_converged,
            "beat_index": periodic_beat,
            "window_closes": True if passive else bool(summary.periodic),
            "window_error": _clean(summary.periodicity_error),
        },
        "work_mmhg_ml": {
            "active": _clean(summary.w_act),
            "dissipated": _clean(summary.w_diss),
            "external": _clean(summary.w_ex),
            "delta_mechanical": _clean(summary.delta_mechanical),
            "active_by_chamber": {k: _clean(v) for k, v in summary.w_act_chamber.items()},
            "dissipated_by_term": {k: _clean(v) for k, v in summary.w_diss_terms.items()},
        },
        "work_joule": {
            "active": _clean(summary.w_act_joule),
            "dissipated": _clean(summary.w_diss_joule),
        },
        "work_balance": {
            "ratio": _clean(ratio),
            "threshold": WORK_BALANCE_THRESHOLD,
            "pass": None if passive else bool(abs(ratio) <= WORK_BALANCE_THRESHOLD),
        },
        "daily_work_kj": {
            "total": _clean(summary.daily_work_kj),
            **{k: _clean(v) for k, v in chamber_kj.items()},
            "atria": _clean(chamber_kj["la"] + chamber_kj["ra"]),
        },
        "balance_residual": _clean(balance_summary),
        "clinical": None,
        "reference_anchors": dict(REFERENCE_ANCHORS),
    }
    if clinical is not None:
        def estimate(p_mean, power, err_total, err_lv):
            return {
                "p_mean_mmhg": _clean(p_mean),
                "daily_kj": _clean(daily_kj(power)),
                "error_vs_total": None if passive else _clean(err_total),
                "error_vs_lv": None if passive else _clean(err_lv),
            }

        out["clinical"] = {
            "stroke_volume_ml": _clean(clinical.stroke_volume),
            "p_max_mmhg": _clean(clinical.p_max),
            "p_min_mmhg": _clean(clinical.p_min),
            "true_mean": estimate(clinical.p_mean, clinical.power_true_mean,
                                  clinical.error_true_mean_total, clinical.error_true_mean_lv),
            "clinical_mean": estimate(clinical.p_mean_clinical, clinical.power_clinical_mean,
                                      clinical.error_clinical_mean_total,
                                      clinical.error_clinical_mean_lv),
        }
    return out


def _num(x, spec=".6g"):
    return "n/a" if x is None else format(x, spec)


def _pct(x):
    return "n/a" if x is None else f"{100 * x:+.2f}%"


def render_text(report: dict) -> str:
    w = report["work_mmhg_ml"]
    wb = report["work_balance"]
    per = report["periodicity"]
    daily = report["daily_work_kj"]
    lines = [
        "cardio0d energy report",
        f"mode:                 {report['mode']}",
        f"analysed beats:       {report['n_beats']} ({_num(report['duration_s'])} s)",
        f"periodic regime:      "
        + ("not searched" if per["beat_index"] is None else
           f"beat {per['beat_index']}" if per["converged"] else "not reached")
        + f" (window start/end error {_num(per['window_error'], '.3g')})",
        f"W_act  [mmHg mL]:     {_num(w['active'])}   [J]: {_num(report['work_joule']['active'])}",
        f"W_diss [mmHg mL]:     {_num(w['dissipated'])}   [J]: {_num(report['work_joule']['dissipated'])}",
        f"W_ex   [mmHg mL]:     {_num(w['external'])}",
        f"delta M [mmHg mL]:    {_num(w['delta_mechanical'])}",
    ]
    if wb["pass"] is None:
        lines.append("work balance:         |W_act + W_diss| / W_act = n/a (no active work)")
    else:
        verdict = "PASS" if wb["pass"] else "FAIL"
        lines.append(f"work balance:         |W_act + W_diss| / W_act = {abs(wb['ratio']):.3e}"
                     f" (threshold {wb['threshold']:.0%}) {verdict}")
    lines.append("active work by chamber [mmHg mL]:")
    lines += [f"  {k:<8}{_num(v)}" for k, v in w["active_by_chamber"].items()]
    lines.append("dissipated work by term [mmHg mL]:")
    lines += [f"  {k:<16}{_num(v)}" for k, v in w["dissipated_by_term"].items()]
    lines.append("daily work [kJ]:")
    lines += [f"  {k:<8}{_num(v, '.4g')}" for k, v in daily.items()]
    lines.append(f"balance residual:     {_num(report['balance_residual'], '.3e')}"
                 " (max |M(t) - M(0) - int P| / int |P_diss|)")
    c = report["clinical"]
    if c is not None:
        lines.append(f"clinical estimates (SV {_num(c['stroke_volume_ml'], '.4g')} mL, "
                     f"p_max {_num(c['p_max_mmhg'], '.4g')}, p_min {_num(c['p_min_mmhg'], '.4g')} mmHg):")
        for label, key in (("true mean pressure", "true_mean"),
                           ("1/3 max + 2/3 min", "clinical_mean")):
            e = c[key]
            lines.append(f"  {label:<20} p={_num(e['p_mean_mmhg'], '.4g')} mmHg  "
                         f"{_num(e['daily_kj'], '.4g')} kJ/day  "
                         f"error vs total {_pct(e['error_vs_total'])}, vs LV {_pct(e['error_vs_lv'])}")
    lines.append("reference values (published, different parameter set):")
    lines += [f"  {k:<28}{v}" for k, v in report["reference_anchors"].items()]
    return "\n".join(lines) + "\n"


def write_report(summary: WorkSummary, format: str = "text", path=None, **details) -> str:
    """Render the energy report as ``text`` or ``json``; optionally write it.

    ``details`` are forwarded to :func:`report_dict` (clinical estimate,
    balance summary, periodic beat index).
    """
    report = report_dict(summary, **details)
    if format == "json":
        doc = json.dumps(report, indent=2, sort_keys=False) + "\n"
    elif format == "text":
        doc = render_text(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        path = Path(path)
        try:
            path.write_text(doc, encoding="utf-8", newline="\n")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from None
    return doc
