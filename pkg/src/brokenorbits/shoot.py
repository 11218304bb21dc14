"""Short two-point boundary problems: fixed-time and fixed-energy arcs.

A segment is the unique short Euler-Lagrange arc joining two nearby
torus points.  Everything downstream (the broken-orbit action, its
gradient and Hessian) is assembled from segment boundary velocities and
the blocks of the segment transition matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BelowE0, BrokenOrbitsError, Degenerate, NoConvergence, ScaleNotFound
from .models import LagrangianModel, energy_qv

SHOOT_TOL = 1e-11
SHOOT_MAXIT = 50
NONDEG_REL = 1e-8


@dataclass
class SegmentSolution:
    """Euler-Lagrange arc q0 -> q1 over time tau with its linearization.

    `target` is the representative of q1 in the chart centered at q0
    (q0 + minimal displacement); `stm` maps (dq0, dv0) to (dq1, dv1).
    """

    model: LagrangianModel = field(repr=False)
    q0: np.ndarray
    q1: np.ndarray
    target: np.ndarray
    tau: float
    nu_minus: np.ndarray
    nu_plus: np.ndarray
    action: float
    stm: np.ndarray = field(repr=False)
    newton_iters: int = 0
    residual: float = 0.0

    # -- transition-matrix blocks ------------------------------------------
    @property
    def A(self):
        return self.stm[0:2, 0:2]

    @property
    def B(self):
        """dq(tau)/dv(0); invertibility is the non-degeneracy of the arc."""
        return self.stm[0:2, 2:4]

    @property
    def C(self):
        return self.stm[2:4, 0:2]

    @property
    def D(self):
        return self.stm[2:4, 2:4]

    def check_nondegenerate(self):
        s = np.linalg.svd(self.B, compute_uv=False)
        if s[-1] <= NONDEG_REL * s[0]:
            raise Degenerate(
                f"boundary Jacobi block near-singular (sv ratio {s[-1] / s[0]:.2e})")

    def _binv(self):
        B = self.B
        det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
        if det == 0.0:
            raise Degenerate("singular boundary block")
        return np.array([[B[1, 1], -B[0, 1]], [-B[1, 0], B[0, 0]]]) / det

    # Derivatives of the boundary velocities with respect to the segment
    # data (q0, q1, tau), obtained by solving the linear boundary problem
    # on the transition-matrix blocks.
    @property
    def dnu_minus_dq0(self):
        return -self._binv() @ self.A

    @property
    def dnu_minus_dq1(self):
        return self._binv()

    @property
    def dnu_minus_dtau(self):
        return -self._binv() @ self.nu_plus

    @property
    def dnu_plus_dq0(self):
        return self.C - self.D @ (self._binv() @ self.A)

    @property
    def dnu_plus_dq1(self):
        return self.D @ self._binv()

    @property
    def dnu_plus_dtau(self):
        L_q = self.model.L_q(self.q1, self.nu_plus)
        L_vv = self.model.L_vv(self.q1, self.nu_plus)
        L_qv = self.model.L_qv(self.q1, self.nu_plus)
        accel = np.linalg.solve(L_vv, L_q - L_qv.T @ self.nu_plus)
        return accel - self.D @ (self._binv() @ self.nu_plus)

    def energy(self) -> float:
        return energy_qv(self.model, self.q0, self.nu_minus)

    def sample(self, n: int = 32):
        """(ts, states) along the arc in the q0-centered chart."""
        z0 = np.concatenate([self.q0, self.nu_minus])
        res = kernels.propagate(self.model, z0, self.tau, n_samples=n)
        return res.ts, res.states


@dataclass
class InjectivityScales:
    """Empirically certified shooting scales.

    Sampled certification: `n_trials` random boundary problems with
    dist < rho_inj and tau < tau_inj all converged and were
    non-degenerate.  No claim is made about the true analytic constants.
    """

    rho_inj: float
    tau_inj: float
    epsilon: float
    n_trials: int
    levels_tried: int


def fixed_time_minimizer(model: LagrangianModel, q0, q1, tau: float, *,
                         v_guess=None, rtol: float = 1e-10, atol: float = 1e-10,
                         tol: float = SHOOT_TOL, maxit: int = SHOOT_MAXIT,
                         check: bool = True) -> SegmentSolution:
    """Short fixed-time arc from q0 to (the nearest image of) q1.

    Damped Newton on the initial velocity, straight-line velocity as the
    default guess.  Raises NoConvergence or Degenerate.
    """
    if tau <= 0:
        raise ValueError("segment time must be positive")
    q0 = model.torus.wrap(q0)
    d = model.torus.delta(q0, q1)
    target = q0 + d
    if v_guess is None:
        v_guess = d / tau
    v0, v1, action, stm, iters, resid = kernels.shoot_fixed(
        model, q0, target, tau, v_guess, rtol=rtol, atol=atol, tol=tol, maxit=maxit)
    seg = SegmentSolution(model=model, q0=q0, q1=model.torus.wrap(q1),
                          target=target, tau=tau, nu_minus=v0, nu_plus=v1,
                          action=action, stm=stm, newton_iters=iters,
                          residual=resid)
    if check:
        seg.check_nondegenerate()
    return seg


def free_time_minimizer(model: LagrangianModel, k: float, q0, q1, *,
                        rtol: float = 1e-10, atol: float = 1e-10,
                        tol: float = SHOOT_TOL, maxit: int = SHOOT_MAXIT) -> SegmentSolution:
    """Arc of energy k joining q0, q1: solves endpoint and energy equations.

    Unknowns (v0, tau); Newton on the 3-vector
    [q(tau) - q1, E(q0, v0) - k] with the straight constant-speed guess.
    """
    q0 = model.torus.wrap(q0)
    if k <= energy_qv(model, q0, np.zeros(2)):
        raise BelowE0(f"energy {k} not above stationary energy at q0")
    d = model.torus.delta(q0, q1)
    dist = float(np.hypot(d[0], d[1]))
    if dist == 0.0:
        raise NoConvergence("coincident endpoints have no positive-time arc")
    u = d / dist

    # speed s with E(q0, s u) = k by doubling + bisection
    hi = 1.0
    while energy_qv(model, q0, hi * u) < k:
        hi *= 2.0
        if hi > 1e12:
            raise NoConvergence("energy level unreachable along guess direction")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if energy_qv(model, q0, mid * u) < k:
            lo = mid
        else:
            hi = mid
    speed = hi
    v = speed * u
    tau = dist / speed
    target = q0 + d

    for it in range(maxit):
        res = kernels.propagate(model, np.concatenate([q0, v]), tau,
                                rtol=rtol, atol=atol, want_stm=True)
        r = np.empty(3)
        r[0:2] = res.zf[0:2] - target
        r[2] = energy_qv(model, q0, v) - k
        rn = float(np.linalg.norm(r))
        if rn <= tol:
            seg = SegmentSolution(model=model, q0=q0, q1=model.torus.wrap(q1),
                                  target=target, tau=tau, nu_minus=v,
                                  nu_plus=res.zf[2:4].copy(), action=res.action,
                                  stm=res.stm, newton_iters=it, residual=rn)
            seg.check_nondegenerate()
            return seg
        J = np.zeros((3, 3))
        J[0:2, 0:2] = res.stm[0:2, 2:4]          # d endpoint / d v0
        J[0:2, 2] = res.zf[2:4]                  # d endpoint / d tau
        J[2, 0:2] = model.L_vv(q0, v) @ v        # dE/dv0 = E_v
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise Degenerate("singular free-time Jacobian") from exc
        lam = 1.0
        while lam >= 1e-8:
            v_try = v + lam * step[0:2]
            tau_try = tau + lam * step[2]
            if tau_try > 0:
                res_t = kernels.propagate(model, np.concatenate([q0, v_try]),
                                          tau_try, rtol=rtol, atol=atol)
                r_t = np.empty(3)
                r_t[0:2] = res_t.zf[0:2] - target
                r_t[2] = energy_qv(model, q0, v_try) - k
                if np.linalg.norm(r_t) < rn * (1.0 - 1e-4 * lam):
                    v, tau = v_try, tau_try
                    break
            lam *= 0.5
        else:
            raise NoConvergence(f"free-time line search stalled, residual {rn:.3e}")
    raise NoConvergence(f"free-time shooting failed after {maxit} iterations")


# ---------------------------------------------------------------------------
# Jacobi fields along a segment


@dataclass
class FieldSamples:
    """Vector field t -> theta(t) along a segment, with derivative."""

    ts: np.ndarray
    theta: np.ndarray      # (n, 2)
    theta_dot: np.ndarray  # (n, 2)
    states: np.ndarray     # (n, 4) base arc samples


def _variational_samples(seg: SegmentSolution, theta0, theta_dot0, n: int):
    """Propagate one solution of the linearized equation along the arc.

    The transition matrix is accumulated interval by interval (cocycle),
    so the cost is linear in the number of samples.
    """
    model = seg.model
    z = np.concatenate([seg.q0, seg.nu_minus])
    ts = np.linspace(0.0, seg.tau, n + 1)
    theta = np.empty((n + 1, 2))
    theta_dot = np.empty((n + 1, 2))
    states = np.empty((n + 1, 4))
    xi = np.concatenate([theta0, theta_dot0])
    theta[0], theta_dot[0] = theta0, theta_dot0
    states[0] = z
    dt = seg.tau / n
    for i in range(1, n + 1):
        res = kernels.propagate(model, z, dt, want_stm=True)
        xi = res.stm @ xi
        z = res.zf
        theta[i], theta_dot[i] = xi[0:2], xi[2:4]
        states[i] = z
    return FieldSamples(ts=ts, theta=theta, theta_dot=theta_dot, states=states)


def boundary_jacobi_field(seg: SegmentSolution, v0, v1, n: int = 32) -> FieldSamples:
    """The unique Jacobi field along the segment with theta(0)=v0, theta(tau)=v1."""
    seg.check_nondegenerate()
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    theta_dot0 = seg._binv() @ (v1 - seg.A @ v0)
    return _variational_samples(seg, v0, theta_dot0, n)


def psi_field(seg: SegmentSolution, n: int = 32) -> FieldSamples:
    """Time-rescaling variation: the tau-derivative of the arc family plus
    the velocity ramp; vanishes at both endpoints and satisfies the
    inhomogeneous linearized equation."""
    seg.check_nondegenerate()
    dtau_dot0 = seg.dnu_minus_dtau
    base = _variational_samples(seg, np.zeros(2), dtau_dot0, n)
    model = seg.model
    psi = base.theta.copy()
    psi_dot = base.theta_dot.copy()
    for i, t in enumerate(base.ts):
        q, v = base.states[i, 0:2], base.states[i, 2:4]
        L_q = model.L_q(q, v)
        L_vv = model.L_vv(q, v)
        L_qv = model.L_qv(q, v)
        accel = np.linalg.solve(L_vv, L_q - L_qv.T @ v)
        psi[i] += v * (t / seg.tau)
        psi_dot[i] += (accel * t + v) / seg.tau
    return FieldSamples(ts=base.ts, theta=psi, theta_dot=psi_dot, states=base.states)


# ---------------------------------------------------------------------------
# empirical shooting scales


def conjugate_point_free(seg: SegmentSolution, n_checks: int = 8,
                         det_floor: float = 1e-10) -> bool:
    """No conjugate point on (0, tau]: det of the boundary block stays positive.

    The block dq(t)/dv(0) starts like t * identity, so a sign change or a
    near-vanishing determinant at an interior time flags a conjugate point,
    which is exactly the regime where the arc stops being a minimizer.
    """
    model = seg.model
    z0 = np.concatenate([seg.q0, seg.nu_minus])
    scale = seg.tau * seg.tau  # det B ~ t^2 near zero
    for t in np.linspace(seg.tau / n_checks, seg.tau, n_checks):
        res = kernels.propagate(model, z0, t, want_stm=True)
        B = res.stm[0:2, 2:4]
        det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
        if det <= det_floor * scale:
            return False
    return True


def estimate_scales(model: LagrangianModel, k: float, *, n_trials: int = 200,
                    shrink: float = 0.7, floor: float = 1e-5,
                    rho_start: float | None = None, tau_start: float = 1.0,
                    seed: int = 0) -> InjectivityScales:
    """Largest (rho, tau) on a shrinking grid passing sampled certification.

    At each level, `n_trials` random fixed-time problems with
    dist < rho and tau below the level's time scale must all converge,
    be non-degenerate, and be free of interior conjugate points (the
    last test is what rejects arcs that curl past the minimizing regime).
    """
    torus = model.torus
    rng = np.random.default_rng(seed)
    rho = rho_start if rho_start is not None else 0.49 * min(torus.side_lengths)
    tau_c = tau_start
    levels = 0
    while rho > floor and tau_c > floor:
        trials = rng.random((n_trials, 5))
        ok = True
        for row in trials:
            q0 = np.array([row[0] * torus.sides[0], row[1] * torus.sides[1]])
            ang = 2.0 * np.pi * row[2]
            dist = (0.05 + 0.95 * row[3]) * rho
            tau = (0.05 + 0.95 * row[4]) * tau_c
            q1 = q0 + dist * np.array([np.cos(ang), np.sin(ang)])
            try:
                seg = fixed_time_minimizer(model, q0, q1, tau, maxit=30)
                if not conjugate_point_free(seg, n_checks=4):
                    ok = False
                    break
            except BrokenOrbitsError:
                ok = False
                break
        if ok:
            return InjectivityScales(rho_inj=rho, tau_inj=tau_c, epsilon=tau_c,
                                     n_trials=n_trials, levels_tried=levels)
        rho *= shrink
        tau_c *= shrink
        levels += 1
    raise ScaleNotFound(f"no certified scales above floor {floor}")
