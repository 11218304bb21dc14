"""Pure-numpy twin of the compiled hot kernels.

Implements the adaptive Dormand-Prince 5(4) integrator for the
Euler-Lagrange flow, the variational (linearized) equations, and the
fixed-time segment shooter.  The compiled extension `_kernels_cy`
mirrors this module function for function; cross-checking the two is
part of the test suite.

State layout for the integrator: y = [q1, q2, v1, v2, action, Phi(16)]
where Phi is the 4x4 transition matrix of the linearized flow in
(dq, dw) coordinates, w being the momentum variation
w = L_qv^T dq + L_vv dv.  Propagating the momentum form avoids third
derivatives of L; conversion to (dq, dv) blocks happens at the
endpoints only.
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergence, StepFailure

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

MAX_STEPS = 200_000


def _lvv_inv(L_vv):
    det = L_vv[0, 0] * L_vv[1, 1] - L_vv[0, 1] * L_vv[1, 0]
    return np.array([[L_vv[1, 1], -L_vv[0, 1]],
                     [-L_vv[1, 0], L_vv[0, 0]]]) / det


def _rhs(model, y, nst):
    q = y[0:2]
    v = y[2:4]
    L, L_q, _, L_vv, L_qv, L_qq = model.partials(q, v)
    inv = _lvv_inv(L_vv)
    out = np.empty(nst)
    out[0:2] = v
    out[2:4] = inv @ (L_q - L_qv.T @ v)
    out[4] = L
    if nst == 21:
        A = np.empty((4, 4))
        A[0:2, 0:2] = -inv @ L_qv.T
        A[0:2, 2:4] = inv
        A[2:4, 0:2] = L_qq - L_qv @ (inv @ L_qv.T)
        A[2:4, 2:4] = L_qv @ inv
        out[5:21] = (A @ y[5:21].reshape(4, 4)).ravel()
    return out


def _step_span(model, y, t0, t1, rtol, atol, nst, h_init=None):
    """Advance y from t0 to t1 with embedded 5(4) stepping; returns (y, h_last)."""
    span = t1 - t0
    if abs(span) < 1e-13 * max(abs(t1), 1.0):
        return y, h_init
    direction = 1.0 if span > 0 else -1.0
    h = h_init if h_init is not None else direction * abs(span) / 64.0
    if h * direction <= 0 or abs(h) > abs(span):
        h = direction * abs(span) / 64.0
    t = t0
    k = [None] * 7
    k[0] = _rhs(model, y, nst)
    steps = 0
    while direction * (t1 - t) > 0:
        if abs(h) < 1e-14 * max(abs(t1), 1.0):
            raise StepFailure(f"step size underflow at t={t}")
        if steps > MAX_STEPS:
            raise StepFailure("step budget exhausted")
        if direction * (t + h - t1) > 0:
            h = t1 - t
        for i in range(1, 7):
            yi = y + h * sum(_A[i][j] * k[j] for j in range(i))
            k[i] = _rhs(model, yi, nst)
        y_new = y + h * sum(_A[6][j] * k[j] for j in range(6))
        err_vec = h * sum(_ERR[j] * k[j] for j in range(7))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        steps += 1
        if err <= 1.0:
            t += h
            y = y_new
            k[0] = k[6]  # FSAL
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)  # y unchanged: k[0] stays valid
    return y, h


def _t_matrix(model, q, v):
    T = np.zeros((4, 4))
    T[0, 0] = T[1, 1] = 1.0
    T[2:4, 0:2] = model.L_qv(q, v).T
    T[2:4, 2:4] = model.L_vv(q, v)
    return T


def _t_inv(model, q, v):
    Ti = np.zeros((4, 4))
    Ti[0, 0] = Ti[1, 1] = 1.0
    inv = _lvv_inv(model.L_vv(q, v))
    Ti[2:4, 0:2] = -inv @ model.L_qv(q, v).T
    Ti[2:4, 2:4] = inv
    return Ti


def propagate(model, z0, t, rtol=1e-10, atol=1e-10, want_stm=False, n_samples=0):
    """Integrate the Euler-Lagrange flow from z0 = (q, v) for time t.

    Returns (zf, action, stm, ts, states):
      zf     final (4,) state in unwrapped coordinates
      action integral of L along the trajectory
      stm    (4,4) d(phi^t) in (dq, dv) coordinates, or None
      ts, states  sample times / (n, 4) states, or (None, None)
    """
    z0 = np.asarray(z0, dtype=float)
    nst = 21 if want_stm else 5
    y = np.zeros(nst)
    y[0:4] = z0
    if want_stm:
        y[5:21] = np.eye(4).ravel()

    if n_samples and n_samples > 0:
        ts = np.linspace(0.0, t, n_samples + 1)
        states = np.empty((n_samples + 1, 4))
        states[0] = z0
        h = None
        for i in range(1, n_samples + 1):
            y, h = _step_span(model, y, ts[i - 1], ts[i], rtol, atol, nst, h)
            states[i] = y[0:4]
    else:
        ts = states = None
        y, _ = _step_span(model, y, 0.0, t, rtol, atol, nst)

    zf = y[0:4].copy()
    action = float(y[4])
    stm = None
    if want_stm:
        phi_w = y[5:21].reshape(4, 4)
        stm = _t_inv(model, zf[0:2], zf[2:4]) @ phi_w @ _t_matrix(model, z0[0:2], z0[2:4])
    return zf, action, stm, ts, states


def shoot_fixed(model, q0, target, tau, v_guess, rtol=1e-10, atol=1e-10,
                tol=1e-11, maxit=50):
    """Damped Newton on v0 -> q(tau; q0, v0) - target (unwrapped chart).

    Returns (v0, v1, action, stm, iters, resid).  The returned stm is the
    (dq, dv) transition matrix over the converged segment, so its q-v
    block is the boundary-problem Jacobian.
    """
    q0 = np.asarray(q0, dtype=float)
    target = np.asarray(target, dtype=float)
    v = np.asarray(v_guess, dtype=float).copy()
    zf, action, stm, _, _ = propagate(model, np.concatenate([q0, v]), tau,
                                      rtol, atol, want_stm=True)
    r = zf[0:2] - target
    rn = float(np.hypot(r[0], r[1]))
    it = 0
    while rn > tol and it < maxit:
        B = stm[0:2, 2:4]
        det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
        if abs(det) < 1e-300:
            raise NoConvergence("singular shooting Jacobian")
        step = -np.array([B[1, 1] * r[0] - B[0, 1] * r[1],
                          -B[1, 0] * r[0] + B[0, 0] * r[1]]) / det
        lam = 1.0
        while lam >= 1e-8:
            v_try = v + lam * step
            zf_t, action_t, stm_t, _, _ = propagate(
                model, np.concatenate([q0, v_try]), tau, rtol, atol, want_stm=True)
            r_t = zf_t[0:2] - target
            rn_t = float(np.hypot(r_t[0], r_t[1]))
            if rn_t < rn * (1.0 - 1e-4 * lam) or rn_t < tol:
                v, zf, action, stm, r, rn = v_try, zf_t, action_t, stm_t, r_t, rn_t
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"shooting line search stalled, residual {rn:.3e}")
        it += 1
    if rn > tol:
        raise NoConvergence(f"shooting failed after {maxit} iterations, residual {rn:.3e}")
    return v, zf[2:4].copy(), action, stm, it, rn
