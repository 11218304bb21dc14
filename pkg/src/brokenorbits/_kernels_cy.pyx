# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: Euler-Lagrange flow, variational equations, shooting.

Mirrors `_kernels_py` exactly (same Dormand-Prince 5(4) tableau, same
state layout, same damping strategy) for the two descriptor model
families:

  kind 0  quadratic kinetic + Fourier vector/scalar potentials
  kind 1  two-rotator counterexample system with the C^2 plateau profile

The parity of the two implementations is asserted by the test suite.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, fmod, pow

from .errors import NoConvergence, StepFailure

cnp.import_array()

DEF NSTMAX = 21

cdef struct Partials:
    double L
    double Lq[2]
    double Lv[2]
    double Lvv[4]
    double Lqv[4]
    double Lqq[4]


cdef inline void _fourier_eval(double* par, int off, int nterms, double s1, double s2,
                               double q0, double q1, double* val, double* g,
                               double* hh) noexcept nogil:
    # hh: [d00, d01, d11]
    cdef int m
    cdef double w0, w1, ph, c, s, a, b, amp
    val[0] = 0.0
    g[0] = 0.0
    g[1] = 0.0
    hh[0] = 0.0
    hh[1] = 0.0
    hh[2] = 0.0
    cdef double twopi = 6.283185307179586476925286766559
    for m in range(nterms):
        w0 = twopi * par[off + 4 * m] / s1
        w1 = twopi * par[off + 4 * m + 1] / s2
        a = par[off + 4 * m + 2]
        b = par[off + 4 * m + 3]
        ph = w0 * q0 + w1 * q1
        c = cos(ph)
        s = sin(ph)
        val[0] += a * c + b * s
        amp = -a * s + b * c
        g[0] += amp * w0
        g[1] += amp * w1
        amp = -a * c - b * s
        hh[0] += amp * w0 * w0
        hh[1] += amp * w0 * w1
        hh[2] += amp * w1 * w1


cdef inline double _chi(double x, double r2, double R) noexcept nogil:
    cdef double u, g
    if x <= r2:
        return x
    if x >= R:
        return R
    u = (x - r2) / (R - r2)
    g = u * (1.0 + u * u * (4.0 + u * (-7.0 + 3.0 * u)))
    return r2 + (R - r2) * g


cdef inline double _chi_d1(double x, double r2, double R) noexcept nogil:
    cdef double u
    if x <= r2:
        return 1.0
    if x >= R:
        return 0.0
    u = (x - r2) / (R - r2)
    return 1.0 + u * u * (12.0 + u * (-28.0 + 15.0 * u))


cdef inline double _chi_d2(double x, double r2, double R) noexcept nogil:
    cdef double u
    if x <= r2 or x >= R:
        return 0.0
    u = (x - r2) / (R - r2)
    return (u * (24.0 + u * (-84.0 + 60.0 * u))) / (R - r2)


cdef inline double _wrap_centered(double q, double side) noexcept nogil:
    cdef double w = fmod(q + 0.5 * side, side)
    if w < 0.0:
        w += side
    return w - 0.5 * side


cdef void eval_partials(int kind, double* par, double q0, double q1,
                        double v0, double v1, Partials* P) noexcept nogil:
    cdef double m1, m2, s1, s2
    cdef int nV, nA1, nA2, off
    cdef double V, A1, A2
    cdef double gV[2]
    cdef double gA1[2]
    cdef double gA2[2]
    cdef double hV[3]
    cdef double hA1[3]
    cdef double hA2[3]
    cdef double r1, r2, R, side, x0, x1, c0p, c1p
    cdef int i
    if kind == 0:
        s1 = par[0]; s2 = par[1]; m1 = par[2]; m2 = par[3]
        nV = <int> par[4]; nA1 = <int> par[5]; nA2 = <int> par[6]
        off = 7
        _fourier_eval(par, off, nV, s1, s2, q0, q1, &V, gV, hV)
        off += 4 * nV
        _fourier_eval(par, off, nA1, s1, s2, q0, q1, &A1, gA1, hA1)
        off += 4 * nA1
        _fourier_eval(par, off, nA2, s1, s2, q0, q1, &A2, gA2, hA2)
        P.L = 0.5 * (m1 * v0 * v0 + m2 * v1 * v1) + A1 * v0 + A2 * v1 - V
        P.Lq[0] = gA1[0] * v0 + gA2[0] * v1 - gV[0]
        P.Lq[1] = gA1[1] * v0 + gA2[1] * v1 - gV[1]
        P.Lv[0] = m1 * v0 + A1
        P.Lv[1] = m2 * v1 + A2
        P.Lvv[0] = m1; P.Lvv[1] = 0.0; P.Lvv[2] = 0.0; P.Lvv[3] = m2
        # Lqv[i,j] = dA_j / dq_i
        P.Lqv[0] = gA1[0]; P.Lqv[1] = gA2[0]
        P.Lqv[2] = gA1[1]; P.Lqv[3] = gA2[1]
        P.Lqq[0] = v0 * hA1[0] + v1 * hA2[0] - hV[0]
        P.Lqq[1] = v0 * hA1[1] + v1 * hA2[1] - hV[1]
        P.Lqq[2] = P.Lqq[1]
        P.Lqq[3] = v0 * hA1[2] + v1 * hA2[2] - hV[2]
    else:
        r1 = par[0]; r2 = par[1]; R = par[2]
        side = 2.0 * R
        q0 = _wrap_centered(q0, side)
        q1 = _wrap_centered(q1, side)
        x0 = q0 * q0
        x1 = q1 * q1
        c0p = _chi_d1(x0, r2, R)
        c1p = _chi_d1(x1, r2, R)
        P.L = 0.5 * (r1 * v0 * v0 + r2 * v1 * v1) \
            - 0.5 * (_chi(x0, r2, R) / r1 + _chi(x1, r2, R) / r2)
        P.Lq[0] = -c0p * q0 / r1
        P.Lq[1] = -c1p * q1 / r2
        P.Lv[0] = r1 * v0
        P.Lv[1] = r2 * v1
        P.Lvv[0] = r1; P.Lvv[1] = 0.0; P.Lvv[2] = 0.0; P.Lvv[3] = r2
        for i in range(4):
            P.Lqv[i] = 0.0
        P.Lqq[0] = -(2.0 * x0 * _chi_d2(x0, r2, R) + c0p) / r1
        P.Lqq[1] = 0.0
        P.Lqq[2] = 0.0
        P.Lqq[3] = -(2.0 * x1 * _chi_d2(x1, r2, R) + c1p) / r2


cdef void _rhs(int kind, double* par, double* y, double* out, int nst) noexcept nogil:
    cdef Partials P
    cdef double det, i00, i01, i10, i11, f0, f1
    cdef double g00, g01, g10, g11
    cdef double A[16]
    cdef int r, c, j
    eval_partials(kind, par, y[0], y[1], y[2], y[3], &P)
    det = P.Lvv[0] * P.Lvv[3] - P.Lvv[1] * P.Lvv[2]
    i00 = P.Lvv[3] / det
    i01 = -P.Lvv[1] / det
    i10 = -P.Lvv[2] / det
    i11 = P.Lvv[0] / det
    # f = Lq - Lqv^T v  (Lqv^T[l,m] = Lqv[m,l])
    f0 = P.Lq[0] - (P.Lqv[0] * y[2] + P.Lqv[2] * y[3])
    f1 = P.Lq[1] - (P.Lqv[1] * y[2] + P.Lqv[3] * y[3])
    out[0] = y[2]
    out[1] = y[3]
    out[2] = i00 * f0 + i01 * f1
    out[3] = i10 * f0 + i11 * f1
    out[4] = P.L
    if nst == 21:
        # A = [[-inv Lqv^T, inv], [Lqq - Lqv inv Lqv^T, Lqv inv]]
        # Lqv^T entries: t00=Lqv[0], t01=Lqv[2], t10=Lqv[1], t11=Lqv[3]
        A[0] = -(i00 * P.Lqv[0] + i01 * P.Lqv[1])
        A[1] = -(i00 * P.Lqv[2] + i01 * P.Lqv[3])
        A[4] = -(i10 * P.Lqv[0] + i11 * P.Lqv[1])
        A[5] = -(i10 * P.Lqv[2] + i11 * P.Lqv[3])
        A[2] = i00; A[3] = i01
        A[6] = i10; A[7] = i11
        # G = Lqv inv  (2x2)
        g00 = P.Lqv[0] * i00 + P.Lqv[1] * i10
        g01 = P.Lqv[0] * i01 + P.Lqv[1] * i11
        g10 = P.Lqv[2] * i00 + P.Lqv[3] * i10
        g11 = P.Lqv[2] * i01 + P.Lqv[3] * i11
        # K = Lqq - Lqv inv Lqv^T = Lqq - G Lqv^T, (Lqv^T)[l,m] = Lqv[m,l]
        A[8] = P.Lqq[0] - (g00 * P.Lqv[0] + g01 * P.Lqv[1])
        A[9] = P.Lqq[1] - (g00 * P.Lqv[2] + g01 * P.Lqv[3])
        A[12] = P.Lqq[2] - (g10 * P.Lqv[0] + g11 * P.Lqv[1])
        A[13] = P.Lqq[3] - (g10 * P.Lqv[2] + g11 * P.Lqv[3])
        A[10] = g00; A[11] = g01
        A[14] = g10; A[15] = g11
        # out[5:21] = A @ Phi
        for r in range(4):
            for c in range(4):
                f0 = 0.0
                for j in range(4):
                    f0 += A[4 * r + j] * y[5 + 4 * j + c]
                out[5 + 4 * r + c] = f0


# Dormand-Prince 5(4) tableau (same constants as the pure twin)
cdef double C2 = 0.2, C3 = 0.3, C4 = 0.8, C5 = 8.0 / 9.0
cdef double A21 = 0.2
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double A71 = 35.0 / 384.0, A73 = 500.0 / 1113.0, A74 = 125.0 / 192.0
cdef double A75 = -2187.0 / 6784.0, A76 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0

DEF MAX_STEPS = 200000


cdef int _step_span(int kind, double* par, double* y, double t0, double t1,
                    double rtol, double atol, int nst, double* h_io) noexcept nogil:
    """Advance y in place from t0 to t1. Returns 0 on success, 1 underflow,
    2 step budget exhausted."""
    cdef double span = t1 - t0
    cdef double tiny = fabs(t1)
    if tiny < 1.0:
        tiny = 1.0
    if fabs(span) < 1e-13 * tiny:
        return 0
    cdef double direction = 1.0 if span > 0 else -1.0
    cdef double h = h_io[0]
    if h == 0.0 or h * direction <= 0.0 or fabs(h) > fabs(span):
        h = direction * fabs(span) / 64.0
    cdef double t = t0
    cdef double k1[NSTMAX]
    cdef double k2[NSTMAX]
    cdef double k3[NSTMAX]
    cdef double k4[NSTMAX]
    cdef double k5[NSTMAX]
    cdef double k6[NSTMAX]
    cdef double k7[NSTMAX]
    cdef double yt[NSTMAX]
    cdef double ynew[NSTMAX]
    cdef double errv, sc, err, fac, lim
    cdef int i, steps = 0
    _rhs(kind, par, y, k1, nst)
    lim = fabs(t1)
    if lim < 1.0:
        lim = 1.0
    while direction * (t1 - t) > 0.0:
        if fabs(h) < 1e-14 * lim:
            return 1
        if steps > MAX_STEPS:
            return 2
        if direction * (t + h - t1) > 0.0:
            h = t1 - t
        for i in range(nst):
            yt[i] = y[i] + h * A21 * k1[i]
        _rhs(kind, par, yt, k2, nst)
        for i in range(nst):
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(kind, par, yt, k3, nst)
        for i in range(nst):
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(kind, par, yt, k4, nst)
        for i in range(nst):
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(kind, par, yt, k5, nst)
        for i in range(nst):
            yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                                + A64 * k4[i] + A65 * k5[i])
        _rhs(kind, par, yt, k6, nst)
        for i in range(nst):
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i]
                                  + A75 * k5[i] + A76 * k6[i])
        _rhs(kind, par, ynew, k7, nst)
        err = 0.0
        for i in range(nst):
            errv = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                        + E6 * k6[i] + E7 * k7[i])
            sc = fabs(y[i])
            if fabs(ynew[i]) > sc:
                sc = fabs(ynew[i])
            sc = atol + rtol * sc
            err += (errv / sc) * (errv / sc)
        err = sqrt(err / nst)
        steps += 1
        if err <= 1.0:
            t += h
            for i in range(nst):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if err == 0.0:
                fac = 5.0
            else:
                fac = 0.9 * pow(err, -0.2)
                if fac > 5.0:
                    fac = 5.0
            h *= fac
        else:
            fac = 0.9 * pow(err, -0.2)
            if fac < 0.2:
                fac = 0.2
            h *= fac
            # y unchanged on rejection: k1 stays valid
    h_io[0] = h
    return 0


cdef void _stm_to_v(int kind, double* par, double* z0, double* zf,
                    double* phi_w, double* out) noexcept nogil:
    """out = Tinv(zf) @ phi_w @ T(z0) with T = [[I,0],[Lqv^T, Lvv]]."""
    cdef Partials P0, P1
    cdef double M[16]
    cdef double T0[16]
    cdef double Ti[16]
    cdef double det, i
    cdef int r, c, j
    eval_partials(kind, par, z0[0], z0[1], z0[2], z0[3], &P0)
    eval_partials(kind, par, zf[0], zf[1], zf[2], zf[3], &P1)
    for r in range(16):
        T0[r] = 0.0
        Ti[r] = 0.0
    T0[0] = 1.0; T0[5] = 1.0
    # T0 lower-left = Lqv^T (entries [l,m] = Lqv[m,l]); lower-right = Lvv
    T0[8] = P0.Lqv[0]; T0[9] = P0.Lqv[2]
    T0[12] = P0.Lqv[1]; T0[13] = P0.Lqv[3]
    T0[10] = P0.Lvv[0]; T0[11] = P0.Lvv[1]
    T0[14] = P0.Lvv[2]; T0[15] = P0.Lvv[3]
    Ti[0] = 1.0; Ti[5] = 1.0
    det = P1.Lvv[0] * P1.Lvv[3] - P1.Lvv[1] * P1.Lvv[2]
    cdef double i00 = P1.Lvv[3] / det
    cdef double i01 = -P1.Lvv[1] / det
    cdef double i10 = -P1.Lvv[2] / det
    cdef double i11 = P1.Lvv[0] / det
    # Tinv lower-left = -inv @ Lqv^T
    Ti[8] = -(i00 * P1.Lqv[0] + i01 * P1.Lqv[1])
    Ti[9] = -(i00 * P1.Lqv[2] + i01 * P1.Lqv[3])
    Ti[12] = -(i10 * P1.Lqv[0] + i11 * P1.Lqv[1])
    Ti[13] = -(i10 * P1.Lqv[2] + i11 * P1.Lqv[3])
    Ti[10] = i00; Ti[11] = i01
    Ti[14] = i10; Ti[15] = i11
    # M = phi_w @ T0
    for r in range(4):
        for c in range(4):
            det = 0.0
            for j in range(4):
                det += phi_w[4 * r + j] * T0[4 * j + c]
            M[4 * r + c] = det
    # out = Ti @ M
    for r in range(4):
        for c in range(4):
            det = 0.0
            for j in range(4):
                det += Ti[4 * r + j] * M[4 * j + c]
            out[4 * r + c] = det


def propagate(int kind, cnp.ndarray[cnp.float64_t, ndim=1] params,
              cnp.ndarray[cnp.float64_t, ndim=1] z0, double t,
              double rtol, double atol, int want_stm, int n_samples):
    cdef double* par = <double*> params.data
    cdef double y[NSTMAX]
    cdef double stm_v[16]
    cdef int nst = 21 if want_stm else 5
    cdef int i, status
    cdef double h = 0.0
    cdef double zin[4]
    for i in range(4):
        y[i] = z0[i]
        zin[i] = z0[i]
    y[4] = 0.0
    if want_stm:
        for i in range(16):
            y[5 + i] = 0.0
        y[5] = 1.0; y[10] = 1.0; y[15] = 1.0; y[20] = 1.0

    cdef cnp.ndarray ts = None
    cdef cnp.ndarray states = None
    cdef double[:, ::1] states_v
    cdef double[::1] ts_v
    cdef double t_prev, t_next
    if n_samples > 0:
        ts = np.linspace(0.0, t, n_samples + 1)
        states = np.empty((n_samples + 1, 4))
        states_v = states
        ts_v = ts
        for i in range(4):
            states_v[0, i] = z0[i]
        for i in range(1, n_samples + 1):
            t_prev = ts_v[i - 1]
            t_next = ts_v[i]
            status = _step_span(kind, par, y, t_prev, t_next, rtol, atol, nst, &h)
            if status != 0:
                raise StepFailure("compiled integrator failed (code %d)" % status)
            for status in range(4):
                states_v[i, status] = y[status]
    else:
        status = _step_span(kind, par, y, 0.0, t, rtol, atol, nst, &h)
        if status != 0:
            raise StepFailure("compiled integrator failed (code %d)" % status)

    zf = np.array([y[0], y[1], y[2], y[3]])
    cdef double action = y[4]
    stm = None
    cdef double zfa[4]
    if want_stm:
        for i in range(4):
            zfa[i] = y[i]
        _stm_to_v(kind, par, zin, zfa, &y[5], stm_v)
        stm = np.empty((4, 4))
        for i in range(16):
            stm[i // 4, i % 4] = stm_v[i]
    return zf, action, stm, ts, states


def shoot_fixed(int kind, cnp.ndarray[cnp.float64_t, ndim=1] params,
                cnp.ndarray[cnp.float64_t, ndim=1] q0,
                cnp.ndarray[cnp.float64_t, ndim=1] target, double tau,
                cnp.ndarray[cnp.float64_t, ndim=1] v_guess,
                double rtol, double atol, double tol, int maxit):
    cdef double* par = <double*> params.data
    cdef double y[NSTMAX]
    cdef double ytry[NSTMAX]
    cdef double v[2]
    cdef double vtry[2]
    cdef double r0, r1, rn, rt0, rt1, rnt, det, s0, s1, lam, h
    cdef int it = 0, i, status, ok

    v[0] = v_guess[0]
    v[1] = v_guess[1]

    # initial propagate with STM
    for i in range(16):
        y[5 + i] = 0.0
    y[5] = 1.0; y[10] = 1.0; y[15] = 1.0; y[20] = 1.0
    y[0] = q0[0]; y[1] = q0[1]; y[2] = v[0]; y[3] = v[1]; y[4] = 0.0
    h = 0.0
    status = _step_span(kind, par, y, 0.0, tau, rtol, atol, 21, &h)
    if status != 0:
        raise StepFailure("compiled integrator failed (code %d)" % status)
    r0 = y[0] - target[0]
    r1 = y[1] - target[1]
    rn = sqrt(r0 * r0 + r1 * r1)

    cdef double zin[4]
    cdef double zfa[4]
    cdef double stm_v[16]
    cdef double B00, B01, B10, B11

    while rn > tol and it < maxit:
        # v-coordinate boundary block B = dq(tau)/dv(0)
        zin[0] = q0[0]; zin[1] = q0[1]; zin[2] = v[0]; zin[3] = v[1]
        for i in range(4):
            zfa[i] = y[i]
        _stm_to_v(kind, par, zin, zfa, &y[5], stm_v)
        B00 = stm_v[2]; B01 = stm_v[3]
        B10 = stm_v[6]; B11 = stm_v[7]
        det = B00 * B11 - B01 * B10
        if fabs(det) < 1e-300:
            raise NoConvergence("singular shooting Jacobian")
        s0 = -(B11 * r0 - B01 * r1) / det
        s1 = -(-B10 * r0 + B00 * r1) / det
        lam = 1.0
        ok = 0
        while lam >= 1e-8:
            vtry[0] = v[0] + lam * s0
            vtry[1] = v[1] + lam * s1
            for i in range(16):
                ytry[5 + i] = 0.0
            ytry[5] = 1.0; ytry[10] = 1.0; ytry[15] = 1.0; ytry[20] = 1.0
            ytry[0] = q0[0]; ytry[1] = q0[1]; ytry[2] = vtry[0]; ytry[3] = vtry[1]
            ytry[4] = 0.0
            h = 0.0
            status = _step_span(kind, par, ytry, 0.0, tau, rtol, atol, 21, &h)
            if status == 0:
                rt0 = ytry[0] - target[0]
                rt1 = ytry[1] - target[1]
                rnt = sqrt(rt0 * rt0 + rt1 * rt1)
                if rnt < rn * (1.0 - 1e-4 * lam) or rnt < tol:
                    v[0] = vtry[0]
                    v[1] = vtry[1]
                    for i in range(21):
                        y[i] = ytry[i]
                    r0 = rt0; r1 = rt1; rn = rnt
                    ok = 1
                    break
            lam *= 0.5
        if not ok:
            raise NoConvergence("shooting line search stalled, residual %.3e" % rn)
        it += 1

    if rn > tol:
        raise NoConvergence("shooting failed after %d iterations, residual %.3e"
                            % (maxit, rn))

    zin[0] = q0[0]; zin[1] = q0[1]; zin[2] = v[0]; zin[3] = v[1]
    for i in range(4):
        zfa[i] = y[i]
    _stm_to_v(kind, par, zin, zfa, &y[5], stm_v)
    stm = np.empty((4, 4))
    for i in range(16):
        stm[i // 4, i % 4] = stm_v[i]
    v0 = np.array([v[0], v[1]])
    v1 = np.array([y[2], y[3]])
    return v0, v1, y[4], stm, it, rn
