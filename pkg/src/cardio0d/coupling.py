"""LV replacement by an external pressure-volume chamber.

The LV elastance element is removed from the circulation and the LV
pressure becomes a Lagrange multiplier: at each time step it is the scalar
``p_lv`` for which the 0D LV volume, advanced with the reduced right-hand
side, matches the volume of the external chamber advanced under the same
pressure.

Within a step the multiplier is interpolated linearly from the last
accepted value to the trial value, so the 0D side sees a continuous
pressure history and the scheme stays second-order in the multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Protocol

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .circulation import CirculationState, active_elastance, elastance_at
from .errors import ChamberError, ConfigError, CouplingConvergenceError, CouplingError, IntegrationError
from .params import ChamberParams, ExternalPressure, ModelParams
from .timeloop import SolverConfig, Trajectory

_NAMES = CirculationState.names()


class ExternalChamber(Protocol):
    """Pressure-driven chamber replacing the LV elastance element.

    ``volume(advance(state, t, dt, p))`` must be continuous and strictly
    increasing in ``p`` on ``[p_min, p_max]``, and ``advance`` must be
    deterministic. ``advance`` with ``dt == 0`` returns ``state`` unchanged.
    """

    p_min: float
    p_max: float

    def initial_state(self, t: float, p_lv: float) -> Any: ...

    def advance(self, state: Any, t: float, dt: float, p_lv: float) -> Any: ...

    def volume(self, state: Any) -> float: ...


@dataclass(frozen=True)
class ChamberPoint:
    """State of a history-free chamber: time, loading pressure, volume."""

    t: float
    p_lv: float
    volume: float


class _HistoryFreeChamber:
    p_min: float
    p_max: float

    def volume_at(self, p_lv, t):
        raise NotImplementedError

    def initial_state(self, t, p_lv):
        return ChamberPoint(t, p_lv, self.volume_at(p_lv, t))

    def advance(self, state, t, dt, p_lv):
        if dt == 0:
            return state
        return ChamberPoint(t + dt, p_lv, self.volume_at(p_lv, t + dt))

    def volume(self, state):
        return state.volume


class ElastanceChamber(_HistoryFreeChamber):
    """Inverse of the time-varying elastance law, ``V = v0 + (p - p_ex) / E(t)``."""

    def __init__(self, chamber: ChamberParams, t_beat: float,
                 p_ex: ExternalPressure = ExternalPressure(), p_min=-50.0, p_max=1000.0):
        if not chamber.e_pass > 0:
            raise ConfigError("elastance chamber needs e_pass > 0")
        self.chamber = chamber
        self.t_beat = t_beat
        self.p_ex = p_ex
        self.p_min = p_min
        self.p_max = p_max

    def elastance(self, t):
        return elastance_at(self.chamber, t, self.t_beat)

    def volume_at(self, p_lv, t):
        return self.chamber.v0 + (p_lv - self.p_ex.at(t)) / self.elastance(t)


def reference_elastance_chamber(params: ChamberParams, t_beat: float,
                                p_ex: ExternalPressure = ExternalPressure(), **kw) -> ElastanceChamber:
    return ElastanceChamber(params, t_beat, p_ex, **kw)


class NonlinearChamber(_HistoryFreeChamber):
    """Chamber with an exponential passive law on top of a linear elastance:

    ``p = p_ex + E(t) (V - v0) + alpha (exp(beta (V - v0)) - 1)``

    inverted numerically for ``V``.
    """

    def __init__(self, v0: float, alpha: float, beta: float, elastance: Callable[[float], float],
                 p_ex: ExternalPressure = ExternalPressure(), p_min=None, p_max=1000.0,
                 max_strain=5000.0):
        if not (alpha > 0 and beta > 0):
            raise ConfigError("nonlinear chamber needs alpha > 0 and beta > 0")
        self.v0 = v0
        self.alpha = alpha
        self.beta = beta
        self.elastance = elastance
        self.p_ex = p_ex
        # with E(t) = 0 the law is bounded below by p_ex - alpha
        self.p_min = p_ex.mean - abs(p_ex.amplitude) - 0.9 * alpha if p_min is None else p_min
        self.p_max = p_max
        self.max_strain = max_strain

    def pressure_at(self, v, t):
        x = v - self.v0
        return self.p_ex.at(t) + self.elastance(t) * x + self.alpha * math.expm1(self.beta * x)

    def volume_at(self, p_lv, t):
        e = float(self.elastance(t))
        target = p_lv - self.p_ex.at(t)

        def f(x):
            return e * x + self.alpha * math.expm1(self.beta * x) - target

        if target == 0.0:
            return self.v0
        lo, hi = (0.0, 1.0) if target > 0 else (-1.0, 0.0)
        try:
            while target > 0 and f(hi) < 0:
                lo, hi = hi, 2.0 * hi
                if hi > self.max_strain:
                    raise OverflowError
            while target < 0 and f(lo) > 0:
                lo, hi = 2.0 * lo, lo
                if lo < -self.max_strain:
                    raise OverflowError
            x = brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
        except (OverflowError, RuntimeError, ValueError) as exc:
            raise ChamberError(f"cannot invert chamber law for p_lv={p_lv:.6g} mmHg at t={t:.6g} s",
                               p_lv=p_lv, t=t) from exc
        return self.v0 + x


def nonlinear_test_chamber(params: ChamberParams, t_beat: float,
                           p_ex: ExternalPressure = ExternalPressure(), alpha: float = 0.5,
                           beta: float = 0.025, include_passive: bool = False, **kw) -> NonlinearChamber:
    """Exponential-passive chamber driven by the active elastance of ``params``.

    With ``include_passive`` the linear term uses the full elastance
    (passive + active), which recovers the elastance chamber as
    ``alpha -> 0``.
    """
    if include_passive:
        def elastance(t):
            return elastance_at(params, t, t_beat)
    else:
        def elastance(t):
            return active_elastance(params, t, t_beat)
    return NonlinearChamber(params.v0, alpha, beta, elastance, p_ex, **kw)


@dataclass(frozen=True)
class CouplingConfig:
    chamber: ExternalChamber
    tol: float = 1e-8
    max_iter: int = 100
    window: float = 1.0

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter >= 1 and self.window > 0):
            raise ConfigError("coupling tol, max_iter and window must be positive", key="coupling.tol")


@dataclass(frozen=True)
class CoupledState:
    t: float
    c1: CirculationState
    chamber_state: Any
    p_lv: float
    residual: float = 0.0
    iterations: int = 0


def _advance(t, dt, state: CoupledState, p_trial, pv, chamber, y=None):
    y = state.c1.to_array() if y is None else y
    if dt > 0:
        out = np.empty(12)
        K.rk4_step(float(t), y, float(dt), pv, float(state.p_lv), float(p_trial), True, out)
    else:
        out = y
    try:
        ch = chamber.advance(state.chamber_state, t, dt, p_trial)
    except ChamberError as exc:
        exc.p_lv = p_trial
        raise
    return out[1] - chamber.volume(ch), out, ch


def coupling_residual(t, dt, state: CoupledState, p_lv_trial, params: ModelParams,
                      config: CouplingConfig) -> float:
    """``V_lv`` of the advanced 0D state minus the advanced chamber volume."""
    chamber = config.chamber
    if not chamber.p_min <= p_lv_trial <= chamber.p_max:
        raise ValueError(f"trial pressure {p_lv_trial} outside [{chamber.p_min}, {chamber.p_max}]")
    return _advance(t, dt, state, p_lv_trial, params.to_vector(), chamber)[0]


def solve_decreasing(f, p_start, p_min, p_max, tol, max_iter=100, window=1.0, t=None):
    """Root of a decreasing scalar function by bracketed secant.

    The bracket is grown by doubling a window around ``p_start``; inside the
    bracket an Illinois-weighted secant step is taken, falling back to
    bisection when it leaves the bracket or stalls. Returns
    ``(p, f(p), iterations)``; ``f`` may return extra payload as a tuple
    whose first item is the residual value, which is passed through.
    """
    cache = {}

    def g(p):
        if p not in cache:
            cache[p] = f(p)
        return cache[p]

    def val(p):
        out = g(p)
        return out[0] if isinstance(out, tuple) else out

    p0 = min(max(p_start, p_min), p_max)
    r0 = val(p0)
    if abs(r0) <= tol:
        return p0, g(p0), 0
    direction = 1.0 if r0 > 0 else -1.0
    a, fa = p0, r0
    w = window
    while True:
        b = min(max(p0 + direction * w, p_min), p_max)
        fb = val(b)
        if abs(fb) <= tol:
            return b, g(b), 0
        if (fb > 0) != (fa > 0):
            break
        if b in (p_min, p_max):
            r_lo, r_hi = val(p_min), val(p_max)
            raise CouplingError(
                f"cannot bracket the multiplier in [{p_min:.6g}, {p_max:.6g}] mmHg: "
                f"residuals {r_lo:.6g} and {r_hi:.6g} mL have the same sign",
                t=t, residuals=(r_lo, r_hi),
            )
        a, fa = b, fb
        w *= 2.0
    # f(lo) > 0 > f(hi)
    if fa > 0:
        lo, flo, hi, fhi = a, fa, b, fb
    else:
        lo, flo, hi, fhi = b, fb, a, fa
    side = 0
    width = abs(hi - lo)
    for it in range(1, max_iter + 1):
        p = hi - fhi * (hi - lo) / (fhi - flo)
        if not (min(lo, hi) < p < max(lo, hi)) or abs(hi - lo) > 0.5 * width:
            p = 0.5 * (lo + hi)
        width = abs(hi - lo)
        fp = val(p)
        if abs(fp) <= tol:
            return p, g(p), it
        if fp > 0:
            lo, flo = p, fp
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi, fhi = p, fp
            if side == -1:
                flo *= 0.5
            side = -1
        if abs(hi - lo) <= 4 * np.finfo(float).eps * max(1.0, abs(p)):
            break
    raise CouplingConvergenceError(
        f"multiplier root-find did not reach |residual| <= {tol:g} mL within {max_iter} iterations "
        f"(bracket [{min(lo, hi):.12g}, {max(lo, hi):.12g}] mmHg)",
        t=t, residuals=(flo, fhi),
    )


def initial_coupled_state(t, c1: CirculationState, params: ModelParams, config: CouplingConfig,
                          p_lv: float | None = None) -> CoupledState:
    """Pair a 0D state with a chamber state of matching volume.

    Unless ``p_lv`` is given, the starting multiplier is the pressure at
    which the chamber volume equals ``c1.v_lv``.
    """
    chamber = config.chamber
    if p_lv is None:
        guess = chamber_pressure_guess(t, c1, params)

        def f(p):
            return c1.v_lv - chamber.volume(chamber.initial_state(t, p))

        p_lv, _, _ = solve_decreasing(f, guess, chamber.p_min, chamber.p_max, config.tol,
                                      config.max_iter, config.window, t)
    ch = chamber.initial_state(t, p_lv)
    return CoupledState(t, c1, ch, p_lv, c1.v_lv - chamber.volume(ch))


def chamber_pressure_guess(t, c1, params):
    lv = params.chambers["lv"]
    return params.p_ex.at(t) + elastance_at(lv, t, params.t_beat) * (c1.v_lv - lv.v0)


def solve_coupled_step(t, state: CoupledState, dt, params: ModelParams, config: CouplingConfig,
                       pv=None) -> CoupledState:
    """Advance the coupled system by ``dt`` with the volume constraint enforced."""
    chamber = config.chamber
    pv = params.to_vector() if pv is None else pv
    y0 = state.c1.to_array()

    def f(p):
        return _advance(t, dt, state, p, pv, chamber, y0)

    p, (res, y, ch), iters = solve_decreasing(
        f, state.p_lv, chamber.p_min, chamber.p_max, config.tol, config.max_iter, config.window, t
    )
    status, comp = K._check(y)
    if status != K.OK:
        name = _NAMES[comp]
        raise IntegrationError(f"invalid {name} after coupled step at t={t + dt:.6g} s",
                               t=t + dt, component=name)
    return CoupledState(t + dt, CirculationState.from_array(y), ch, p, res, iters)


def simulate_coupled(params: ModelParams, c1_0: CirculationState, n_beats: int,
                     solver: SolverConfig, coupling: CouplingConfig, t0: float = 0.0,
                     p_lv0: float | None = None, record_beats: int | None = None) -> Trajectory:
    """Fixed-step coupled run; the trajectory carries the chamber volume,
    constraint residual and root-find iteration count as extras."""
    if n_beats < 1:
        raise ValueError("n_beats must be >= 1")
    spb = solver.steps_per_beat(params.t_beat)
    stride = solver.sample_stride
    if spb % stride:
        raise ConfigError("sample_stride must divide the steps per beat", key="solver.sample_stride")
    record_beats = n_beats if record_beats is None else min(record_beats, n_beats)
    record_from = (n_beats - record_beats) * spb
    dt = solver.dt
    pv = params.to_vector()
    chamber = coupling.chamber
    state = initial_coupled_state(t0, c1_0, params, coupling, p_lv0)

    ts, ys, c2s, vch, res, its = [], [], [], [], [], []
    beat_y = np.empty((n_beats + 1, 12))
    beat_amp = np.zeros((n_beats, 12))
    c2 = np.empty(8)

    def record(s):
        y = s.c1.to_array()
        K.derived(s.t, y, pv, s.p_lv, True, c2)
        ts.append(s.t)
        ys.append(y)
        c2s.append(c2.copy())
        vch.append(chamber.volume(s.chamber_state))
        res.append(s.residual)
        its.append(s.iterations)

    y = state.c1.to_array()
    beat_y[0] = y
    beat_amp[0] = np.abs(y)
    for n in range(n_beats * spb + 1):
        if n >= record_from and (n - record_from) % stride == 0:
            record(state)
        if n == n_beats * spb:
            break
        state = solve_coupled_step(t0 + n * dt, state, dt, params, coupling, pv)
        # pin the clock to the step grid
        state = replace(state, t=t0 + (n + 1) * dt)
        y = state.c1.to_array()
        beat = n // spb
        np.maximum(beat_amp[beat], np.abs(y), out=beat_amp[beat])
        if (n + 1) % spb == 0:
            k = (n + 1) // spb
            beat_y[k] = y
            if k < n_beats:
                beat_amp[k] = np.abs(y)
    n_samples = len(ts)
    markers = np.arange(0, n_samples, spb // stride) if n_samples else np.array([], int)
    extras = {
        "chamber_volume": np.array(vch),
        "constraint_residual": np.array(res),
        "iterations": np.array(its, dtype=int),
    }
    return Trajectory(np.array(ts), np.array(ys).reshape(-1, 12), np.array(c2s).reshape(-1, 8),
                      params.t_beat, markers, beat_y, beat_amp, "coupled", extras)


@dataclass(frozen=True)
class BoundaryWork:
    """Pressure work across the LV boundary computed from both sides."""

    chamber_side: float  # sum of mean p_lv times chamber volume increments
    fluid_side: float  # trapezoid of p_lv (q_mv - q_av)

    @property
    def mismatch(self):
        return self.chamber_side - self.fluid_side


def boundary_work(traj: Trajectory) -> BoundaryWork:
    if traj.mode != "coupled":
        raise ValueError("boundary work needs a coupled trajectory")
    d = traj.derived
    p = np.asarray(d.p_lv)
    v = traj.extras["chamber_volume"]
    chamber_side = float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(v)))
    fluid = p * (d.q_mv - d.q_av)
    fluid_side = float(np.sum(0.5 * (fluid[1:] + fluid[:-1]) * np.diff(traj.t)))
    return BoundaryWork(chamber_side, fluid_side)


def make_chamber(kind: str, params: ModelParams, **options) -> ExternalChamber:
    """Built-in chamber by name: ``elastance`` or ``nonlinear``."""
    lv = params.chambers["lv"]
    if kind == "elastance":
        return reference_elastance_chamber(lv, params.t_beat, params.p_ex, **options)
    if kind == "nonlinear":
        return nonlinear_test_chamber(lv, params.t_beat, params.p_ex, **options)
    raise ConfigError(f"unknown chamber {kind!r}; expected 'elastance' or 'nonlinear'",
                      key="coupling.chamber")


__all__ = [
    "BoundaryWork",
    "ChamberPoint",
    "CoupledState",
    "CouplingConfig",
    "ElastanceChamber",
    "ExternalChamber",
    "NonlinearChamber",
    "boundary_work",
    "coupling_residual",
    "initial_coupled_state",
    "make_chamber",
    "nonlinear_test_chamber",
    "reference_elastance_chamber",
    "simulate_coupled",
    "solve_coupled_step",
    "solve_decreasing",
]
