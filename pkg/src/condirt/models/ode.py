"""Batched Dormand-Prince 5(4) integration with per-trajectory step control.

``scipy.integrate.solve_ivp`` controls one step size for the whole state, so
stacking thousands of independent parameter values into one system would
let the hardest trajectory dictate every step. Here each trajectory keeps
its own step size and error estimate.
"""
from __future__ import annotations

import numpy as np

__all__ = ["dopri45", "rk4_fixed", "OdeError"]


class OdeError(RuntimeError):
    """Step size underflow or iteration limit in the ODE integrator."""


_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri45(rhs, y0, t_out, rtol=1e-6, atol=None, params=None, h0=None, max_steps=100000):
    """Integrate a batch of autonomous-in-parameters ODE systems.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, y, params) -> dy`` with ``y`` of shape ``(m, s)``; ``params``
        is sliced alongside ``y`` for active trajectories.
    y0 : ndarray, shape (m, s)
    t_out : sequence of float
        Increasing output times, the first one not smaller than zero. The
        integration starts at ``t = 0``.
    rtol, atol : float
        Tolerances of the mixed error norm; ``atol`` defaults to
        ``rtol * 1e-2``.
    params : ndarray, shape (m, p), optional

    Returns
    -------
    ndarray, shape (len(t_out), m, s)
    """
    atol = rtol * 1e-2 if atol is None else atol
    y = np.array(y0, dtype=float, copy=True)
    m = y.shape[0]
    params = np.zeros((m, 0)) if params is None else np.asarray(params, dtype=float)
    t_out = np.asarray(t_out, dtype=float)
    out = np.empty((t_out.size,) + y.shape)
    t = np.zeros(m)
    span = float(t_out[-1]) if t_out.size else 0.0
    h = np.full(m, h0 if h0 is not None else max(span, 1.0) * 1e-3)
    err_prev = np.full(m, 1e-4)
    k1 = rhs(t, y, params)
    steps = 0
    for j, t_end in enumerate(t_out):
        active = np.flatnonzero(t < t_end)
        while active.size:
            steps += 1
            if steps > max_steps:
                raise OdeError("maximum number of steps exceeded")
            ta, ya, pa = t[active], y[active], params[active]
            ha = np.minimum(h[active], t_end - ta)
            if np.any(ha <= 1e-14 * np.maximum(1.0, np.abs(ta))):
                raise OdeError("step size underflow")
            ks = [k1[active]]
            for s in range(1, 7):
                ys = ya + ha[:, None] * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
                ks.append(rhs(ta + _C[s] * ha, ys, pa))
            y_new = ya + ha[:, None] * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
            err_vec = ha[:, None] * sum(e * k for e, k in zip(_E, ks))
            scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
            err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
            ok = err <= 1.0
            # PI controller (Gustafsson) on accepted steps, plain I on rejected.
            err_safe = np.maximum(err, 1e-10)
            fac_acc = 0.9 * err_safe ** (-0.7 / 5) * err_prev[active] ** (0.4 / 5)
            fac_rej = 0.9 * err_safe ** (-1 / 5)
            fac = np.where(ok, np.clip(fac_acc, 0.2, 5.0), np.clip(fac_rej, 0.1, 1.0))
            acc = active[ok]
            t[acc] = ta[ok] + ha[ok]
            # Land exactly on the output time to avoid rounding drift.
            t[acc] = np.where(t_end - t[acc] <= 1e-13 * max(1.0, abs(t_end)), t_end, t[acc])
            y[acc] = y_new[ok]
            k1[acc] = ks[6][ok]
            err_prev[acc] = np.maximum(err[ok], 1e-4)
            clipped = ha < h[active]
            h[active] = np.where(ok & clipped, np.maximum(h[active], ha * fac), ha * fac)
            active = active[t[active] < t_end]
        out[j] = y
    return out


def rk4_fixed(rhs, y0, t_out, h, params=None):
    """Classical fourth-order Runge-Kutta with a fixed step, for reference solutions."""
    y = np.array(y0, dtype=float, copy=True)
    m = y.shape[0]
    params = np.zeros((m, 0)) if params is None else np.asarray(params, dtype=float)
    out = np.empty((len(t_out),) + y.shape)
    t = 0.0
    for j, t_end in enumerate(t_out):
        n = int(np.ceil((t_end - t) / h - 1e-9))
        if n > 0:
            step = (t_end - t) / n
            for _ in range(n):
                tt = np.full(m, t)
                k1 = rhs(tt, y, params)
                k2 = rhs(tt + step / 2, y + step / 2 * k1, params)
                k3 = rhs(tt + step / 2, y + step / 2 * k2, params)
                k4 = rhs(tt + step, y + step * k3, params)
                y = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += step
        t = t_end
        out[j] = y
    return out
