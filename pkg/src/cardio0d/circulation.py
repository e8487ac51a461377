"""Algebraic relations and right-hand sides of the closed-loop 0D model.

Every function here is pure and works elementwise: the fields of
:class:`CirculationState` / :class:`DerivedState` may be Python floats or
equally-shaped numpy arrays (e.g. the columns of a recorded trajectory).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .params import CHAMBERS, ChamberParams, ModelParams, ValveParams


def _values(obj):
    # shallow counterpart of dataclasses.astuple (which deep-copies numpy arrays)
    return tuple(getattr(obj, f.name) for f in fields(obj))


@dataclass(frozen=True)
class CirculationState:
    """Differential state, ordered as the 12-vector used for serialization."""

    v_la: float
    v_lv: float
    v_ra: float
    v_rv: float
    p_ar_sys: float
    p_ven_sys: float
    p_ar_pul: float
    p_ven_pul: float
    q_ar_sys: float
    q_ven_sys: float
    q_ar_pul: float
    q_ven_pul: float

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != 12:
            raise ValueError(f"expected 12 components, got shape {arr.shape}")
        if arr.ndim == 1:
            return cls(*(float(x) for x in arr))
        return cls(*(arr[..., i] for i in range(12)))

    def to_array(self):
        values = _values(self)
        if all(np.ndim(v) == 0 for v in values):
            return np.array(values, dtype=float)
        return np.stack(np.broadcast_arrays(*values), axis=-1).astype(float)

    def __add__(self, other):
        return CirculationState(*(a + b for a, b in zip(_values(self), _values(other))))

    def scale(self, factor):
        return CirculationState(*(factor * a for a in _values(self)))


@dataclass(frozen=True)
class DerivedState:
    """Algebraic state: chamber pressures then valve flows."""

    p_lv: float
    p_la: float
    p_rv: float
    p_ra: float
    q_mv: float
    q_av: float
    q_tv: float
    q_pv: float

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != 8:
            raise ValueError(f"expected 8 components, got shape {arr.shape}")
        if arr.ndim == 1:
            return cls(*(float(x) for x in arr))
        return cls(*(arr[..., i] for i in range(8)))

    def to_array(self):
        values = _values(self)
        if all(np.ndim(v) == 0 for v in values):
            return np.array(values, dtype=float)
        return np.stack(np.broadcast_arrays(*values), axis=-1).astype(float)


def activation(tau, t_contract, t_relax):
    """Piecewise-cosine activation on [0, 1] for the time since onset ``tau``."""
    if isinstance(tau, float):
        if tau < t_contract:
            return 0.5 * (1.0 - math.cos(math.pi * tau / t_contract))
        if tau < t_contract + t_relax:
            return 0.5 * (1.0 + math.cos(math.pi * (tau - t_contract) / t_relax))
        return 0.0
    tau = np.asarray(tau, dtype=float)
    rise = 0.5 * (1.0 - np.cos(np.pi * tau / t_contract))
    fall = 0.5 * (1.0 + np.cos(np.pi * (tau - t_contract) / t_relax))
    out = np.where(tau < t_contract, rise, np.where(tau < t_contract + t_relax, fall, 0.0))
    return out if out.ndim else float(out)


def active_elastance(chamber: ChamberParams, t, t_beat):
    if isinstance(t, (float, int)):
        tau = (float(t) - chamber.t_onset) % t_beat
    else:
        tau = np.mod(np.asarray(t, dtype=float) - chamber.t_onset, t_beat)
    return chamber.e_act_max * activation(tau, chamber.t_contract, chamber.t_relax)


def elastance_at(chamber: ChamberParams, t, t_beat):
    """Total elastance ``e_pass + e_act_max * a(t mod t_beat)``."""
    if not t_beat > 0:
        raise ValueError("t_beat must be positive")
    return chamber.e_pass + active_elastance(chamber, t, t_beat)


def chamber_pressure(e, v, v0, p_ex):
    return p_ex + e * (v - v0)


def valve_resistance(p_upstream, p_downstream, valve: ValveParams):
    """Open (``r_min``) under a forward or zero gradient, closed otherwise."""
    r = np.where(np.asarray(p_upstream) >= np.asarray(p_downstream), valve.r_min, valve.r_max)
    return r if r.ndim else float(r)


def valve_flow(p_upstream, p_downstream, valve: ValveParams):
    return (p_upstream - p_downstream) / valve_resistance(p_upstream, p_downstream, valve)


def chamber_pressures(t, c1: CirculationState, params: ModelParams):
    p_ex = params.p_ex.at(t)
    vols = {"la": c1.v_la, "lv": c1.v_lv, "ra": c1.v_ra, "rv": c1.v_rv}
    return {
        name: chamber_pressure(
            elastance_at(params.chambers[name], t, params.t_beat),
            vols[name],
            params.chambers[name].v0,
            p_ex,
        )
        for name in CHAMBERS
    }


def _assemble(c1, params, p_lv, p_la, p_rv, p_ra):
    v = params.valves
    return DerivedState(
        p_lv=p_lv,
        p_la=p_la,
        p_rv=p_rv,
        p_ra=p_ra,
        q_mv=valve_flow(p_la, p_lv, v["mv"]),
        q_av=valve_flow(p_lv, c1.p_ar_sys, v["av"]),
        q_tv=valve_flow(p_ra, p_rv, v["tv"]),
        q_pv=valve_flow(p_rv, c1.p_ar_pul, v["pv"]),
    )


def derived_state(t, c1: CirculationState, params: ModelParams) -> DerivedState:
    """Chamber pressures from the elastance law, then the four valve flows."""
    p = chamber_pressures(t, c1, params)
    return _assemble(c1, params, p["lv"], p["la"], p["rv"], p["ra"])


def derived_state_reduced(t, c1: CirculationState, p_lv, params: ModelParams) -> DerivedState:
    """Same as :func:`derived_state` with the LV pressure imposed from outside."""
    p = chamber_pressures(t, c1, params)
    return _assemble(c1, params, p_lv, p["la"], p["rv"], p["ra"])


def rhs_full(t, c1: CirculationState, c2: DerivedState, params: ModelParams) -> CirculationState:
    comp = params.compartments
    ar_s, ven_s, ar_p, ven_p = comp["ar_sys"], comp["ven_sys"], comp["ar_pul"], comp["ven_pul"]
    return CirculationState(
        v_la=c1.q_ven_pul - c2.q_mv,
        v_lv=c2.q_mv - c2.q_av,
        v_ra=c1.q_ven_sys - c2.q_tv,
        v_rv=c2.q_tv - c2.q_pv,
        p_ar_sys=(c2.q_av - c1.q_ar_sys) / ar_s.c,
        p_ven_sys=(c1.q_ar_sys - c1.q_ven_sys) / ven_s.c,
        p_ar_pul=(c2.q_pv - c1.q_ar_pul) / ar_p.c,
        p_ven_pul=(c1.q_ar_pul - c1.q_ven_pul) / ven_p.c,
        q_ar_sys=(c1.p_ar_sys - c1.p_ven_sys - ar_s.r * c1.q_ar_sys) / ar_s.l,
        q_ven_sys=(c1.p_ven_sys - c2.p_ra - ven_s.r * c1.q_ven_sys) / ven_s.l,
        q_ar_pul=(c1.p_ar_pul - c1.p_ven_pul - ar_p.r * c1.q_ar_pul) / ar_p.l,
        q_ven_pul=(c1.p_ven_pul - c2.p_la - ven_p.r * c1.q_ven_pul) / ven_p.l,
    )


def rhs(t, c1: CirculationState, params: ModelParams) -> CirculationState:
    """Monolithic right-hand side ``D(t, c1, W(t, c1))``."""
    return rhs_full(t, c1, derived_state(t, c1, params), params)


def rhs_reduced(t, c1: CirculationState, p_lv, params: ModelParams) -> CirculationState:
    return rhs_full(t, c1, derived_state_reduced(t, c1, p_lv, params), params)


def total_blood_volume(c1: CirculationState, params: ModelParams):
    """Chamber volumes plus compliance-stored volumes (unstressed offsets omitted)."""
    comp = params.compartments
    return (
        c1.v_la
        + c1.v_lv
        + c1.v_ra
        + c1.v_rv
        + comp["ar_sys"].c * c1.p_ar_sys
        + comp["ven_sys"].c * c1.p_ven_sys
        + comp["ar_pul"].c * c1.p_ar_pul
        + comp["ven_pul"].c * c1.p_ven_pul
    )


def default_initial_state():
    """Resting guess: end-diastolic volumes, resting pressures, zero flows."""
    return CirculationState(
        v_la=65.0,
        v_lv=120.0,
        v_ra=65.0,
        v_rv=120.0,
        p_ar_sys=85.0,
        p_ven_sys=17.0,
        p_ar_pul=18.0,
        p_ven_pul=10.0,
        q_ar_sys=0.0,
        q_ven_sys=0.0,
        q_ar_pul=0.0,
        q_ven_pul=0.0,
    )
