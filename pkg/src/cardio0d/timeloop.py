"""Time integration of the monolithic model and periodic-regime detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .circulation import CirculationState, DerivedState
from .errors import ConfigError, IntegrationError
from .params import ModelParams

log = logging.getLogger(__name__)

METHODS = ("rk4", "dopri54")
_NAMES = CirculationState.names()


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-4
    method: str = "rk4"
    atol: float = 1e-6
    rtol: float = 1e-6
    max_beats: int = 400
    periodic_tol: float = 1e-4
    sample_stride: int = 1
    dt_max: float = 5e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}", key="solver.dt")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}",
                              key="solver.method")
        for name in ("atol", "rtol", "periodic_tol", "dt_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", key=f"solver.{name}")
        if self.max_beats < 1 or self.sample_stride < 1:
            raise ConfigError("max_beats and sample_stride must be >= 1", key="solver.max_beats")

    def steps_per_beat(self, t_beat):
        n = int(round(t_beat / self.dt))
        if n < 1 or abs(n * self.dt - t_beat) > 1e-9 * t_beat:
            raise ConfigError(
                f"dt={self.dt} does not divide the heartbeat period {t_beat}", key="solver.dt"
            )
        return n


@dataclass(frozen=True)
class Trajectory:
    """Recorded samples plus per-beat bookkeeping.

    ``c1`` is (n, 12) in :class:`CirculationState` order and ``c2`` is (n, 8)
    in :class:`DerivedState` order. ``beat_markers`` index samples with
    ``t = k * t_beat``. ``beat_states[k]`` is the state at the start of beat
    ``k`` of the run and ``beat_amplitudes[k]`` the componentwise max of
    ``|c1|`` over that beat; these cover the whole run even when only the
    final beats were sampled.
    """

    t: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    t_beat: float
    beat_markers: np.ndarray
    beat_states: np.ndarray
    beat_amplitudes: np.ndarray
    mode: str = "monolithic"
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def states(self) -> CirculationState:
        return CirculationState.from_array(self.c1.reshape(-1, 12))

    @property
    def derived(self) -> DerivedState:
        return DerivedState.from_array(self.c2.reshape(-1, 8))

    @property
    def n_beats(self):
        return max(len(self.beat_markers) - 1, 0)

    def beat(self, k):
        """Samples of the ``k``-th recorded beat, both endpoints included."""
        if not 0 <= k < self.n_beats:
            raise IndexError(f"beat {k} out of range ({self.n_beats} recorded)")
        return self.window(self.beat_markers[k], self.beat_markers[k + 1])

    def last_beats(self, n):
        return self.window(self.beat_markers[-1 - n], self.beat_markers[-1])

    def window(self, i0, i1):
        i0, i1 = int(i0), int(i1)
        markers = self.beat_markers[(self.beat_markers >= i0) & (self.beat_markers <= i1)] - i0
        extras = {k: v[i0:i1 + 1] for k, v in self.extras.items()}
        return Trajectory(self.t[i0:i1 + 1], self.c1[i0:i1 + 1], self.c2[i0:i1 + 1],
                          self.t_beat, markers, self.beat_states, self.beat_amplitudes,
                          self.mode, extras)

    def subsample(self, stride):
        """Every ``stride``-th sample; beat markers must stay on the grid."""
        if stride == 1:
            return self
        if np.any(self.beat_markers % stride):
            raise ValueError("stride must keep beat markers as sample points")
        idx = np.arange(0, len(self.t), stride)
        extras = {k: v[idx] for k, v in self.extras.items()}
        return Trajectory(self.t[idx], self.c1[idx], self.c2[idx], self.t_beat,
                          self.beat_markers // stride, self.beat_states,
                          self.beat_amplitudes, self.mode, extras)

    @classmethod
    def from_samples(cls, t, c1, c2=None, t_beat=1.0, mode="monolithic", extras=None):
        """Build a trajectory from raw samples, deriving beat bookkeeping from
        the samples that fall on multiples of ``t_beat``."""
        t = np.asarray(t, dtype=float)
        c1 = np.asarray(c1, dtype=float).reshape(len(t), 12)
        c2 = np.zeros((len(t), 8)) if c2 is None else np.asarray(c2, dtype=float)
        k = np.round(t / t_beat)
        markers = np.flatnonzero(np.abs(t - k * t_beat) <= 1e-9 * t_beat)
        states = c1[markers]
        amps = np.array([np.abs(c1[a:b + 1]).max(axis=0)
                         for a, b in zip(markers[:-1], markers[1:])]).reshape(-1, 12)
        return cls(t, c1, c2, t_beat, markers, states, amps, mode, dict(extras or {}))


def _raise_for_status(status, step, comp, t0, dt):
    t = t0 + step * dt
    name = _NAMES[comp] if comp >= 0 else "?"
    if status == K.NONFINITE:
        raise IntegrationError(f"non-finite {name} at t={t:.6g} s", t=t, component=name)
    if status == K.NEGATIVE_VOLUME:
        raise IntegrationError(
            f"nonpositive chamber volume {name} at t={t:.6g} s "
            "(unphysiological parameters or timestep too large)",
            t=t, component=name,
        )


def _check_state(y, t):
    status, comp = K._check(y)
    if status != K.OK:
        _raise_for_status(status, 0, comp, t, 0.0)


TABLEAUX = {
    "rk4": (K.RK4_A, K.RK4_B, K.RK4_C),
    "dopri54": (K._DP_A, K._DP_B, K._DP_C),
}


def explicit_rk_step(f, t, y, dt, method="rk4"):
    """One step of ``y' = f(t, y)`` using the tableau of the compiled scheme.

    Reference implementation for generic problems; the compiled kernels
    evaluate the same coefficients for the circulation model.
    """
    a, b, c = TABLEAUX[method]
    y = np.asarray(y, dtype=float)
    k = []
    for s in range(len(b)):
        inc = sum((a[s, j] * k[j] for j in range(s) if a[s, j] != 0.0), np.zeros_like(y))
        k.append(np.asarray(f(t + c[s] * dt, y + dt * inc), dtype=float))
    return y + dt * sum(bs * ks for bs, ks in zip(b, k))


def step(t, c1: CirculationState, dt, params: ModelParams, config: SolverConfig) -> CirculationState:
    """Advance ``c1`` by one step of the configured explicit scheme."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = c1.to_array()
    out = np.empty(12)
    pv = params.to_vector()
    if config.method == "rk4":
        K.rk4_step(float(t), y, float(dt), pv, 0.0, 0.0, False, out)
    else:
        K.dopri_step(float(t), y, float(dt), pv, out, np.empty(12))
    _check_state(out, t + dt)
    return CirculationState.from_array(out)


def simulate(params: ModelParams, c1_0: CirculationState, n_beats: int,
             config: SolverConfig = SolverConfig(), t0: float = 0.0,
             record_beats: int | None = None) -> Trajectory:
    """Integrate ``n_beats`` heartbeats from ``c1_0`` at time ``t0``.

    Only the final ``record_beats`` beats are sampled (all by default); the
    per-beat states and amplitudes always cover the full run.
    """
    if n_beats < 1:
        raise ValueError("n_beats must be >= 1")
    record_beats = n_beats if record_beats is None else min(record_beats, n_beats)
    y0 = np.asarray(c1_0.to_array() if isinstance(c1_0, CirculationState) else c1_0, float)
    _check_state(y0, t0)
    if config.method == "rk4":
        return _simulate_rk4(params, y0, n_beats, config, t0, record_beats)
    return _simulate_adaptive(params, y0, n_beats, config, t0, record_beats)


def integrate_interval(params: ModelParams, c1_0: CirculationState, t0: float, t1: float,
                       dt: float) -> CirculationState:
    """Fixed-step RK4 from ``t0`` to ``t1``; ``dt`` must divide the interval."""
    n = int(round((t1 - t0) / dt))
    if n < 1 or abs(n * dt - (t1 - t0)) > 1e-9 * max(abs(t1 - t0), dt):
        raise ValueError(f"dt={dt} does not divide the interval [{t0}, {t1}]")
    y0 = np.asarray(c1_0.to_array() if isinstance(c1_0, CirculationState) else c1_0, float)
    _check_state(y0, t0)
    beat_y = np.empty((2, 12))
    status, bad_step, comp, _ = K.rk4_run(
        y0, float(t0), float(dt), n, n, params.to_vector(), 1, n + 1,
        np.empty(0), np.empty((0, 12)), np.empty((0, 8)), beat_y, np.zeros((1, 12)),
    )
    _raise_for_status(status, bad_step, comp, t0, dt)
    return CirculationState.from_array(beat_y[1])


def _simulate_rk4(params, y0, n_beats, config, t0, record_beats):
    spb = config.steps_per_beat(params.t_beat)
    stride = config.sample_stride
    if spb % stride:
        raise ConfigError("sample_stride must divide the steps per beat", key="solver.sample_stride")
    n_steps = n_beats * spb
    record_from = (n_beats - record_beats) * spb
    n_samples = (n_steps - record_from) // stride + 1 if record_beats > 0 else 0
    if record_beats == 0:
        record_from = n_steps + 1
    out_t = np.empty(n_samples)
    out_y = np.empty((n_samples, 12))
    out_c2 = np.empty((n_samples, 8))
    beat_y = np.empty((n_beats + 1, 12))
    beat_amp = np.zeros((n_beats, 12))
    status, bad_step, comp, n_rec = K.rk4_run(
        y0, float(t0), float(config.dt), n_steps, spb, params.to_vector(), stride, record_from,
        out_t, out_y, out_c2, beat_y, beat_amp,
    )
    _raise_for_status(status, bad_step, comp, t0, config.dt)
    markers = np.arange(0, n_samples, spb // stride) if n_samples else np.array([], int)
    return Trajectory(out_t, out_y, out_c2, params.t_beat, markers, beat_y, beat_amp)


def _valve_gradients(c2, y):
    return np.array([c2[1] - c2[0], c2[0] - y[4], c2[3] - c2[2], c2[2] - y[6]])


def _simulate_adaptive(params, y0, n_beats, config, t0, record_beats):
    """Dormand-Prince 5(4) with step-size control.

    Steps land exactly on beat boundaries. When any valve gradient changes
    sign inside an accepted step, the next step is capped at ``config.dt``
    so the switching instant is resolved at the fixed-step resolution.
    """
    pv = params.to_vector()
    T = params.t_beat
    y = y0.copy()
    ynew = np.empty(12)
    err = np.empty(12)
    c2 = np.empty(8)
    K.derived(t0, y, pv, 0.0, False, c2)
    grad = _valve_gradients(c2, y)
    h = config.dt
    ts, ys, c2s, markers = [], [], [], []
    beat_y = np.empty((n_beats + 1, 12))
    beat_amp = np.zeros((n_beats, 12))
    beat_y[0] = y
    first_recorded = n_beats - record_beats

    def record(t):
        ts.append(t)
        ys.append(y.copy())
        c2s.append(c2.copy())

    for beat in range(n_beats):
        t = t0 + beat * T
        t_end = t0 + (beat + 1) * T
        beat_amp[beat] = np.abs(y)
        if beat >= first_recorded:
            if not ts:
                markers.append(0)
                record(t)
        while t < t_end:
            h = min(h, config.dt_max, t_end - t)
            last = t_end - t <= h * (1 + 1e-12)
            if last:
                h = t_end - t
            K.dopri_step(t, y, h, pv, ynew, err)
            scale = config.atol + config.rtol * np.maximum(np.abs(y), np.abs(ynew))
            enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if not np.isfinite(enorm):
                enorm = np.inf
            if enorm > 1.0:
                h *= max(0.2, 0.9 * enorm ** -0.2) if np.isfinite(enorm) else 0.2
                if h < 1e-14 * T:
                    raise IntegrationError(f"step size underflow at t={t:.6g} s", t=t)
                continue
            t = t_end if last else t + h
            status, comp = K._check(ynew)
            if status != K.OK:
                _raise_for_status(status, 0, comp, t, 0.0)
            y[:] = ynew
            K.derived(t, y, pv, 0.0, False, c2)
            new_grad = _valve_gradients(c2, y)
            switched = np.any(np.signbit(new_grad) != np.signbit(grad))
            grad = new_grad
            np.maximum(beat_amp[beat], np.abs(y), out=beat_amp[beat])
            factor = 0.9 * enorm ** -0.2 if enorm > 0 else 5.0
            h_next = h * min(5.0, max(0.2, factor))
            if switched:
                h_next = min(h_next, h, config.dt)
            h = h_next
            if beat >= first_recorded:
                record(t)
        beat_y[beat + 1] = y
        if beat >= first_recorded:
            markers.append(len(ts) - 1)
    return Trajectory(np.array(ts), np.array(ys).reshape(-1, 12), np.array(c2s).reshape(-1, 8),
                      T, np.array(markers, dtype=int), beat_y, beat_amp)


def periodicity_errors(beat_states, beat_amplitudes):
    """Amplitude-normalized max-norm of each beat-to-beat state change.

    Entry ``k - 1`` compares the states at ``k * T`` and ``(k - 1) * T``.
    """
    states = np.asarray(beat_states)
    amps = np.asarray(beat_amplitudes)[: len(states) - 1]
    scale = np.where(amps > 0, amps, 1.0)
    return np.max(np.abs(np.diff(states, axis=0)) / scale, axis=1)


def detect_periodic_regime(traj: Trajectory, tol: float):
    """First beat ``k >= 1`` whose start state repeats the previous one.

    Returns ``(converged, k)``; ``k`` is ``-1`` when no beat qualifies.
    """
    if len(traj.beat_states) < 3:
        raise ValueError("periodicity detection needs a trajectory spanning at least 2 beats")
    errors = periodicity_errors(traj.beat_states, traj.beat_amplitudes)
    hits = np.flatnonzero(errors <= tol)
    if hits.size == 0:
        return False, -1
    return True, int(hits[0]) + 1


@dataclass(frozen=True)
class PeriodicResult:
    converged: bool
    beat_index: int
    state: CirculationState
    errors: np.ndarray


def run_to_periodic(params: ModelParams, c1_0: CirculationState,
                    config: SolverConfig = SolverConfig(), chunk: int = 10) -> PeriodicResult:
    """Integrate beat chunks until the beat-to-beat change drops below
    ``config.periodic_tol`` or ``config.max_beats`` is reached.

    The returned state is the start of the first periodic beat (or the final
    state when not converged).
    """
    states = [c1_0.to_array()]
    amps = []
    y = states[0]
    beats = 0
    while beats < config.max_beats:
        n = min(chunk, config.max_beats - beats)
        traj = simulate(params, y, n, config, t0=beats * params.t_beat, record_beats=0)
        states.extend(traj.beat_states[1:])
        amps.extend(traj.beat_amplitudes)
        beats += n
        y = states[-1]
        errors = periodicity_errors(states, amps)
        hits = np.flatnonzero(errors <= config.periodic_tol)
        if hits.size:
            k = int(hits[0]) + 1
            log.info("periodic regime reached at beat %d (error %.3g)", k, errors[k - 1])
            return PeriodicResult(True, k, CirculationState.from_array(states[k]), errors)
    log.warning("no periodic regime within %d beats (last error %.3g)",
                config.max_beats, errors[-1])
    return PeriodicResult(False, -1, CirculationState.from_array(y), errors)
