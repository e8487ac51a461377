import json

import numpy as np
import pytest

from cardio0d.energy import clinical_work_estimate, work_integrals
from cardio0d.output import (
    SIG_DIGITS,
    read_timeseries,
    report_dict,
    timeseries_columns,
    timeseries_table,
    write_report,
    write_timeseries,
)
from cardio0d.timeloop import Trajectory


def test_column_contract():
    cols = timeseries_columns()
    assert cols[:4] == ("t", "v_la", "v_lv", "v_ra")
    assert cols[12] == "q_ven_pul" and cols[13] == "p_lv" and cols[20] == "q_pv"
    assert cols[-3:] == ("P_act", "P_ex", "P_diss")
    assert len(cols) == len(set(cols)) == 1 + 12 + 8 + 13 + 4 + 4 + 4 + 4 + 3


def test_empty_trajectory_writes_header_only(tmp_path, params):
    empty = Trajectory.from_samples(np.empty(0), np.empty((0, 12)), t_beat=params.t_beat)
    path = write_timeseries(empty, params, tmp_path / "e.csv")
    assert path.read_bytes() == (",".join(timeseries_columns()) + "\n").encode()


def test_single_sample_writes_two_lines(tmp_path, periodic_beat):
    one = periodic_beat.beat.window(0, 0)
    path = write_timeseries(one, periodic_beat.params, tmp_path / "one.csv")
    data = path.read_bytes()
    assert data.count(b"\n") == 2 and b"\r" not in data


def test_round_trip_to_printed_precision(tmp_path, periodic_beat):
    traj = periodic_beat.beat.subsample(40)
    path = write_timeseries(traj, periodic_beat.params, tmp_path / "ts.csv")
    header, table = read_timeseries(path)
    assert header == timeseries_columns()
    ref = timeseries_table(traj, periodic_beat.params)
    np.testing.assert_allclose(table, ref, rtol=10.0 ** (1 - SIG_DIGITS), atol=1e-300)


def test_output_is_deterministic(tmp_path, periodic_beat):
    traj = periodic_beat.beat.subsample(80)
    a = write_timeseries(traj, periodic_beat.params, tmp_path / "a.csv").read_bytes()
    b = write_timeseries(traj, periodic_beat.params, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_write_failure_names_path(tmp_path, periodic_beat):
    target = tmp_path / "missing" / "ts.csv"
    with pytest.raises(OSError, match="missing"):
        write_timeseries(periodic_beat.beat.window(0, 2), periodic_beat.params, target)


@pytest.fixture(scope="module")
def default_report_parts(periodic_beat):
    summary = work_integrals(periodic_beat.beat, periodic_beat.params)
    clinical = clinical_work_estimate(periodic_beat.beat, periodic_beat.params, summary=summary)
    return summary, {"clinical": clinical, "balance_summary": 1e-6,
                     "periodic_beat": periodic_beat.periodic.beat_index, "periodic_converged": True}


def test_text_report_contains_work_balance_line(default_report_parts):
    summary, details = default_report_parts
    text = write_report(summary, "text", **details)
    line = next(l for l in text.splitlines() if l.startswith("work balance"))
    assert "1%" in line and line.endswith("PASS")
    for label in ("W_act", "W_diss", "daily work", "balance residual", "true mean pressure",
                  "1/3 max + 2/3 min", "periodic regime"):
        assert label in text


def test_json_report_schema(default_report_parts, tmp_path):
    summary, details = default_report_parts
    doc = write_report(summary, "json", tmp_path / "r.json", **details)
    data = json.loads((tmp_path / "r.json").read_text())
    assert data == json.loads(doc)
    assert set(data) == {"mode", "n_beats", "duration_s", "periodicity", "work_mmhg_ml",
                         "work_joule", "work_balance", "daily_work_kj", "balance_residual",
                         "clinical", "reference_anchors"}
    assert set(data["daily_work_kj"]) == {"total", "la", "lv", "ra", "rv", "atria"}
    assert set(data["clinical"]) == {"stroke_volume_ml", "p_max_mmhg", "p_min_mmhg",
                                     "true_mean", "clinical_mean"}
    assert data["work_balance"]["pass"] is True
    assert data["clinical"]["true_mean"]["error_vs_total"] < 0
    assert data["reference_anchors"]["daily_total_kj"] == 182.5


def test_unknown_report_format(default_report_parts):
    with pytest.raises(ValueError):
        write_report(default_report_parts[0], "yaml")


def test_passive_heart_report():
    from cardio0d.circulation import CirculationState
    from cardio0d.params import physiological_default
    from cardio0d.timeloop import SolverConfig, simulate

    p = physiological_default()
    for name in ("la", "lv", "ra", "rv"):
        p = p.with_chamber(name, e_act_max=0.0)
    vols = [p.chambers[k].v0 + 10.0 / p.chambers[k].e_pass for k in ("la", "lv", "ra", "rv")]
    rest = CirculationState(*vols, 10.0, 10.0, 10.0, 10.0, 0.0, 0.0, 0.0, 0.0)
    traj = simulate(p, rest, 1, SolverConfig(dt=4e-4))
    summary = work_integrals(traj, p)
    clinical = clinical_work_estimate(traj, p, summary=summary)
    report = report_dict(summary, clinical=clinical, balance_summary=0.0)
    work = report["work_mmhg_ml"]
    assert work["active"] == 0.0 and work["dissipated"] == 0.0
    assert all(v == 0.0 for v in work["active_by_chamber"].values())
    assert all(v == 0.0 for v in report["daily_work_kj"].values())
    assert report["work_balance"]["pass"] is None
    assert report["periodicity"]["window_closes"] is True
    assert report["clinical"]["true_mean"]["error_vs_total"] is None
    text = write_report(summary, "text", clinical=clinical)
    assert "FAIL" not in text and "n/a (no active work)" in text
