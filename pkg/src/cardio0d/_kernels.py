"""Compiled flat-array kernels backing the time integrators.

These mirror :mod:`cardio0d.circulation` on float64 vectors laid out as in
:meth:`ModelParams.to_vector`; the test suite checks the two against each
other. Falls back to plain Python when numba is unavailable.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

OK = 0
NONFINITE = 1
NEGATIVE_VOLUME = 2

# parameter vector offsets
_VALVE = 24
_COMP = 32
_TBEAT = 44
_PEX = 45


@njit(cache=True)
def activation(tau, tc, tr):
    if tau < tc:
        return 0.5 * (1.0 - math.cos(math.pi * tau / tc))
    if tau < tc + tr:
        return 0.5 * (1.0 + math.cos(math.pi * (tau - tc) / tr))
    return 0.0


@njit(cache=True)
def external_pressure(t, pv):
    amp = pv[_PEX + 1]
    if amp == 0.0:
        return pv[_PEX]
    return pv[_PEX] + amp * math.sin(2.0 * math.pi * t / pv[_PEX + 2])


@njit(cache=True)
def elastance(i, t, pv):
    b = 6 * i
    tau = (t - pv[b + 3]) % pv[_TBEAT]
    return pv[b] + pv[b + 1] * activation(tau, pv[b + 4], pv[b + 5])


@njit(cache=True)
def _flow(pu, pd, r_min, r_max):
    if pu >= pd:
        return (pu - pd) / r_min
    return (pu - pd) / r_max


@njit(cache=True)
def derived(t, y, pv, p_lv, reduced, c2):
    """Fill ``c2`` from state ``y``; with ``reduced`` the LV pressure is ``p_lv``."""
    pex = external_pressure(t, pv)
    p_la = pex + elastance(0, t, pv) * (y[0] - pv[2])
    if reduced:
        p_lvv = p_lv
    else:
        p_lvv = pex + elastance(1, t, pv) * (y[1] - pv[8])
    p_ra = pex + elastance(2, t, pv) * (y[2] - pv[14])
    p_rv = pex + elastance(3, t, pv) * (y[3] - pv[20])
    c2[0] = p_lvv
    c2[1] = p_la
    c2[2] = p_rv
    c2[3] = p_ra
    c2[4] = _flow(p_la, p_lvv, pv[_VALVE], pv[_VALVE + 1])
    c2[5] = _flow(p_lvv, y[4], pv[_VALVE + 2], pv[_VALVE + 3])
    c2[6] = _flow(p_ra, p_rv, pv[_VALVE + 4], pv[_VALVE + 5])
    c2[7] = _flow(p_rv, y[6], pv[_VALVE + 6], pv[_VALVE + 7])


@njit(cache=True)
def rhs_from_derived(y, c2, pv, dy):
    q_mv = c2[4]
    q_av = c2[5]
    q_tv = c2[6]
    q_pv = c2[7]
    c = _COMP
    dy[0] = y[11] - q_mv
    dy[1] = q_mv - q_av
    dy[2] = y[9] - q_tv
    dy[3] = q_tv - q_pv
    dy[4] = (q_av - y[8]) / pv[c + 1]
    dy[5] = (y[8] - y[9]) / pv[c + 4]
    dy[6] = (q_pv - y[10]) / pv[c + 7]
    dy[7] = (y[10] - y[11]) / pv[c + 10]
    dy[8] = (y[4] - y[5] - pv[c] * y[8]) / pv[c + 2]
    dy[9] = (y[5] - c2[3] - pv[c + 3] * y[9]) / pv[c + 5]
    dy[10] = (y[6] - y[7] - pv[c + 6] * y[10]) / pv[c + 8]
    dy[11] = (y[7] - c2[1] - pv[c + 9] * y[11]) / pv[c + 11]


@njit(cache=True)
def rhs(t, y, pv, p_lv, reduced, dy, c2):
    derived(t, y, pv, p_lv, reduced, c2)
    rhs_from_derived(y, c2, pv, dy)


@njit(cache=True)
def rk4_step(t, y, dt, pv, p0, p1, reduced, out):
    """Classical RK4. In reduced mode the LV pressure is interpolated
    linearly from ``p0`` at ``t`` to ``p1`` at ``t + dt``."""
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    c2 = np.empty(8)
    h = 0.5 * dt
    dp = p1 - p0
    rhs(t, y, pv, p0, reduced, k1, c2)
    for i in range(n):
        tmp[i] = y[i] + h * k1[i]
    rhs(t + h, tmp, pv, p0 + 0.5 * dp, reduced, k2, c2)
    for i in range(n):
        tmp[i] = y[i] + h * k2[i]
    rhs(t + h, tmp, pv, p0 + 0.5 * dp, reduced, k3, c2)
    for i in range(n):
        tmp[i] = y[i] + dt * k3[i]
    rhs(t + dt, tmp, pv, p1, reduced, k4, c2)
    for i in range(n):
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _check(y):
    for i in range(y.shape[0]):
        if not math.isfinite(y[i]):
            return NONFINITE, i
    for i in range(4):
        if y[i] <= 0.0:
            return NEGATIVE_VOLUME, i
    return OK, -1


@njit(cache=True)
def rk4_run(y0, t0, dt, n_steps, steps_per_beat, pv, stride, record_from,
            out_t, out_y, out_c2, beat_y, beat_amp):
    """Fixed-step RK4 over ``n_steps`` steps.

    Samples every ``stride`` steps starting at step ``record_from``; stores
    the state at every beat boundary in ``beat_y`` and the per-beat max
    absolute value of each component in ``beat_amp``.

    Returns (status, failing step, failing component, samples written).
    """
    n = y0.shape[0]
    y = y0.copy()
    ynew = np.empty(n)
    c2 = np.empty(8)
    n_rec = 0
    beat_y[0, :] = y
    for i in range(n):
        beat_amp[0, i] = abs(y[i])
    for step in range(n_steps + 1):
        t = t0 + step * dt
        if step >= record_from and (step - record_from) % stride == 0:
            derived(t, y, pv, 0.0, False, c2)
            out_t[n_rec] = t
            out_y[n_rec, :] = y
            out_c2[n_rec, :] = c2
            n_rec += 1
        if step == n_steps:
            break
        rk4_step(t, y, dt, pv, 0.0, 0.0, False, ynew)
        status, comp = _check(ynew)
        if status != OK:
            return status, step + 1, comp, n_rec
        y[:] = ynew
        beat = step // steps_per_beat
        for i in range(n):
            a = abs(y[i])
            if a > beat_amp[beat, i]:
                beat_amp[beat, i] = a
        if (step + 1) % steps_per_beat == 0:
            k = (step + 1) // steps_per_beat
            beat_y[k, :] = y
            if k < beat_amp.shape[0]:
                for i in range(n):
                    beat_amp[k, i] = abs(y[i])
    return OK, -1, -1, n_rec


# classical RK4 tableau (rk4_step hard-codes the same coefficients)
RK4_C = np.array([0.0, 0.5, 0.5, 1.0])
RK4_A = np.array([
    [0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.0, 1.0],
])
RK4_B = np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6])

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([
    71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
])


@njit(cache=True)
def dopri_step(t, y, dt, pv, out, err):
    """One Dormand-Prince step: 5th-order solution into ``out``, the
    embedded error estimate (5th minus 4th order) into ``err``."""
    n = y.shape[0]
    k = np.empty((7, n))
    tmp = np.empty(n)
    c2 = np.empty(8)
    dy = np.empty(n)
    rhs(t, y, pv, 0.0, False, dy, c2)
    k[0, :] = dy
    for s in range(1, 7):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _DP_A[s, j] * k[j, i]
            tmp[i] = y[i] + dt * acc
        rhs(t + _DP_C[s] * dt, tmp, pv, 0.0, False, dy, c2)
        k[s, :] = dy
    for i in range(n):
        acc = 0.0
        eacc = 0.0
        for s in range(7):
            acc += _DP_B[s] * k[s, i]
            eacc += _DP_E[s] * k[s, i]
        out[i] = y[i] + dt * acc
        err[i] = dt * eacc
