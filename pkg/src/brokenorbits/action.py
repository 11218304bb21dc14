"""The discrete free-period action functional over broken orbits.

A broken orbit is h torus points joined by short fixed-time minimizing
arcs sharing a common segment time tau; the functional value is

    S_k(points, tau) = h tau k + sum of segment actions.

Its exact first derivatives come from the boundary velocities of the
segments, the second derivatives from the segment transition matrices.
The coordinate order for matrices is (q_0, ..., q_{h-1}, tau), so the
full Hessian is (2h+1) x (2h+1) and its restriction to fixed tau is the
leading (2h) x (2h) block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import NotCritical, SegmentFailure, BrokenOrbitsError
from .flow import Propagator, linearized_flow
from .models import LagrangianModel, TangentState, energy_qv
from .shoot import SegmentSolution, fixed_time_minimizer
from .torus import TorusConfig

DEFAULT_TOL_CRIT = 1e-8
DEFAULT_TOL_RANK_REL = 1e-6


@dataclass
class DiscreteLoop:
    """h torus points plus a common segment time; total period is h tau."""

    points: np.ndarray  # (h, 2), wrapped
    tau: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 2:
            raise ValueError("need at least two loop points of dimension 2")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError("segment time must be positive and finite")

    @property
    def h(self) -> int:
        return self.points.shape[0]

    @property
    def period(self) -> float:
        return self.h * self.tau

    def wrapped(self, torus: TorusConfig) -> "DiscreteLoop":
        return DiscreteLoop(points=torus.wrap(self.points), tau=self.tau)

    def max_gap(self, torus: TorusConfig) -> float:
        return max(torus.distance(self.points[i], self.points[(i + 1) % self.h])
                   for i in range(self.h))

    def winding(self, torus: TorusConfig) -> tuple[int, int]:
        """Homotopy class from summed minimal displacements."""
        total = np.zeros(2)
        for i in range(self.h):
            total += torus.delta(self.points[i], self.points[(i + 1) % self.h])
        w = total / torus.sides
        return int(round(w[0])), int(round(w[1]))

    def unwrapped_points(self, torus: TorusConfig) -> np.ndarray:
        """Lift to the plane following minimal displacements from point 0."""
        out = np.empty_like(self.points)
        out[0] = self.points[0]
        for i in range(1, self.h):
            out[i] = out[i - 1] + torus.delta(self.points[i - 1], self.points[i])
        return out

    def copy(self) -> "DiscreteLoop":
        return DiscreteLoop(points=self.points.copy(), tau=self.tau)


def iterate(loop: DiscreteLoop, m: int) -> DiscreteLoop:
    """m-fold cover: points repeated m times, same segment time."""
    if m < 1 or int(m) != m:
        raise ValueError("iterate count must be a positive integer")
    return DiscreteLoop(points=np.tile(loop.points, (int(m), 1)), tau=loop.tau)


@dataclass
class GradientVector:
    """Gradient of S_k in the broken-orbit metric (tau weighted by h)."""

    w: np.ndarray  # (h, 2)
    mu: float

    def norm(self) -> float:
        h = self.w.shape[0]
        return float(np.sqrt(np.sum(self.w * self.w) + h * self.mu * self.mu))

    def as_coordinates(self) -> np.ndarray:
        """Plain partial-derivative vector: (dS/dq..., dS/dtau)."""
        h = self.w.shape[0]
        return np.concatenate([self.w.ravel(), [h * self.mu]])

    def metric_inner(self, other: "GradientVector") -> float:
        h = self.w.shape[0]
        return float(np.sum(self.w * other.w) + h * self.mu * other.mu)


@dataclass
class SpectralReport:
    """Second-order data of S_k at a critical loop."""

    hessian_full: np.ndarray
    hessian_restricted: np.ndarray
    ind_H: int
    nul_H: int
    ind_h: int
    nul_h: int
    eigs_H: np.ndarray
    eigs_h: np.ndarray
    monodromy: Propagator
    monodromy_eigenvalues: np.ndarray
    tol_rank_H: float
    tol_rank_h: float
    asymmetry: float  # max |H - H^T| before symmetrization, for auditing

    @staticmethod
    def _gap(eigs, tol):
        """(largest |eig| counted as zero, smallest kept nonzero): the
        margin around the rank cut, for auditing borderline verdicts."""
        inside = np.abs(eigs)[np.abs(eigs) <= tol]
        outside = np.abs(eigs)[np.abs(eigs) > tol]
        return (float(inside.max()) if inside.size else 0.0,
                float(outside.min()) if outside.size else np.inf)

    def to_record(self) -> dict:
        return {
            "ind_H": self.ind_H, "nul_H": self.nul_H,
            "ind_h": self.ind_h, "nul_h": self.nul_h,
            "monodromy_eigenvalues": [[z.real, z.imag]
                                      for z in self.monodromy_eigenvalues],
            "tol_rank_H": self.tol_rank_H,
            "tol_rank_h": self.tol_rank_h,
            "rank_gap_H": self._gap(self.eigs_H, self.tol_rank_H),
            "rank_gap_h": self._gap(self.eigs_h, self.tol_rank_h),
            "hessian_asymmetry": self.asymmetry,
        }


class LoopEvaluator:
    """Evaluates S_k, its gradient and second derivatives on broken loops.

    Segments are memoized by (start point, chart target, tau), which makes
    iterated loops reuse their base segments bit-for-bit.  `guesses` hands
    warm-start velocities to the shooting solver, keyed by segment index.
    """

    def __init__(self, model: LagrangianModel, k: float, *, rtol: float = 1e-10,
                 atol: float = 1e-10, shoot_tol: float = 1e-11, maxit: int = 50):
        self.model = model
        self.k = k
        self.rtol = rtol
        self.atol = atol
        self.shoot_tol = shoot_tol
        self.maxit = maxit
        self._cache: dict = {}

    def clear_cache(self):
        self._cache.clear()

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def _segment(self, q0, q1, tau, guess=None) -> SegmentSolution:
        key = (q0.tobytes(), q1.tobytes(), tau)
        seg = self._cache.get(key)
        if seg is None:
            try:
                seg = fixed_time_minimizer(
                    self.model, q0, q1, tau, v_guess=guess, rtol=self.rtol,
                    atol=self.atol, tol=self.shoot_tol, maxit=self.maxit)
            except BrokenOrbitsError as exc:
                raise SegmentFailure(
                    f"segment {q0} -> {q1} at tau={tau:.3e}: {exc}") from exc
            self._cache[key] = seg
        return seg

    def segments(self, loop: DiscreteLoop, guesses=None) -> list[SegmentSolution]:
        pts = self.model.torus.wrap(loop.points)
        segs = []
        for i in range(loop.h):
            guess = None if guesses is None else guesses.get(i)
            segs.append(self._segment(pts[i], pts[(i + 1) % loop.h], loop.tau, guess))
        return segs

    def action(self, loop: DiscreteLoop, guesses=None) -> float:
        segs = self.segments(loop, guesses)
        return loop.h * loop.tau * self.k + sum(s.action for s in segs)

    def gradient_and_segments(self, loop: DiscreteLoop, guesses=None):
        segs = self.segments(loop, guesses)
        h = loop.h
        pts = self.model.torus.wrap(loop.points)
        w = np.empty((h, 2))
        mu = 0.0
        for i in range(h):
            inc = segs[i - 1].nu_plus       # arrives at q_i
            out = segs[i].nu_minus          # leaves q_i
            w[i] = self.model.L_v(pts[i], inc) - self.model.L_v(pts[i], out)
            mu += self.k - energy_qv(self.model, pts[i], out)
        return GradientVector(w=w, mu=mu / h), segs

    def gradient(self, loop: DiscreteLoop, guesses=None) -> GradientVector:
        return self.gradient_and_segments(loop, guesses)[0]

    def energy_deviation(self, loop: DiscreteLoop, segs=None) -> float:
        segs = segs if segs is not None else self.segments(loop)
        return max(abs(energy_qv(self.model, s.q0, s.nu_minus) - self.k)
                   for s in segs)

    def jacobian(self, loop: DiscreteLoop, segs=None) -> np.ndarray:
        """Exact Jacobian of the coordinate gradient, any loop.

        At a critical loop this matrix is (numerically) symmetric and is
        the Hessian of S_k; away from criticality it keeps the junction
        cross-derivative terms that cancel only on orbits.
        """
        segs = segs if segs is not None else self.segments(loop)
        model = self.model
        h = loop.h
        n = 2 * h + 1
        pts = model.torus.wrap(loop.points)
        J = np.zeros((n, n))

        for i in range(h):
            qi = pts[i]
            inc = segs[i - 1].nu_plus
            out = segs[i].nu_minus
            Mp = model.L_vv(qi, inc)
            Mm = model.L_vv(qi, out)
            r = slice(2 * i, 2 * i + 2)
            im1 = (i - 1) % h
            ip1 = (i + 1) % h

            # incoming arc: nu_plus(q_{i-1}, q_i, tau)
            J[r, 2 * im1:2 * im1 + 2] += Mp @ segs[i - 1].dnu_plus_dq0
            J[r, 2 * i:2 * i + 2] += Mp @ segs[i - 1].dnu_plus_dq1
            J[r, n - 1] += Mp @ segs[i - 1].dnu_plus_dtau
            # outgoing arc: nu_minus(q_i, q_{i+1}, tau)
            J[r, 2 * i:2 * i + 2] -= Mm @ segs[i].dnu_minus_dq0
            J[r, 2 * ip1:2 * ip1 + 2] -= Mm @ segs[i].dnu_minus_dq1
            J[r, n - 1] -= Mm @ segs[i].dnu_minus_dtau
            # explicit base-point derivative of L_v(q_i, .); cancels at orbits
            J[r, 2 * i:2 * i + 2] += model.L_qv(qi, inc).T - model.L_qv(qi, out).T

            # tau row: -sum_i dE(q_i, nu_minus_i)
            E_q = model.L_qv(qi, out) @ out - model.L_q(qi, out)
            E_v = model.L_vv(qi, out) @ out
            J[n - 1, 2 * i:2 * i + 2] -= E_q
            J[n - 1, 2 * i:2 * i + 2] -= E_v @ segs[i].dnu_minus_dq0
            J[n - 1, 2 * ip1:2 * ip1 + 2] -= E_v @ segs[i].dnu_minus_dq1
            J[n - 1, n - 1] -= E_v @ segs[i].dnu_minus_dtau
        return J

    def monodromy(self, loop: DiscreteLoop, segs=None) -> Propagator:
        segs = segs if segs is not None else self.segments(loop)
        s0 = TangentState.make(self.model.torus, loop.points[0], segs[0].nu_minus)
        return linearized_flow(self.model, s0, loop.period,
                               rtol=self.rtol, atol=self.atol)


# ---------------------------------------------------------------------------
# module-level operations (thin wrappers over the evaluator)


def discrete_action(model: LagrangianModel, k: float, loop: DiscreteLoop) -> float:
    return LoopEvaluator(model, k).action(loop)


def discrete_gradient(model: LagrangianModel, k: float, loop: DiscreteLoop) -> GradientVector:
    return LoopEvaluator(model, k).gradient(loop)


def index_nullity(matrix: np.ndarray, tol_rank: float | None = None,
                  return_eigs: bool = False):
    """(index, nullity) of a symmetric matrix by eigenvalue counting.

    The rank decision uses |eig| < tol_rank with the default threshold
    1e-6 times the spectral radius.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    if tol_rank is None:
        scale = max(np.max(np.abs(eigs)), 1e-12)
        tol_rank = DEFAULT_TOL_RANK_REL * scale
    ind = int(np.sum(eigs < -tol_rank))
    nul = int(np.sum(np.abs(eigs) <= tol_rank))
    if return_eigs:
        return ind, nul, eigs, tol_rank
    return ind, nul


def discrete_hessian(model: LagrangianModel, k: float, loop: DiscreteLoop, *,
                     tol_crit: float = 1e-6, tol_rank: float | None = None,
                     evaluator: LoopEvaluator | None = None) -> SpectralReport:
    """Assemble the Hessian pair and the monodromy spectrum at a critical loop."""
    ev = evaluator if evaluator is not None else LoopEvaluator(model, k)
    grad, segs = ev.gradient_and_segments(loop)
    gnorm = grad.norm()
    if gnorm > tol_crit:
        raise NotCritical(f"gradient norm {gnorm:.3e} exceeds tol_crit {tol_crit:.3e}")
    J = ev.jacobian(loop, segs)
    asym = float(np.max(np.abs(J - J.T)))
    H = 0.5 * (J + J.T)
    h_block = H[:-1, :-1]
    ind_H, nul_H, eigs_H, tol_H = index_nullity(H, tol_rank, return_eigs=True)
    ind_h, nul_h, eigs_h, tol_h = index_nullity(h_block, tol_rank, return_eigs=True)
    P = ev.monodromy(loop, segs)
    return SpectralReport(
        hessian_full=H, hessian_restricted=h_block,
        ind_H=ind_H, nul_H=nul_H, ind_h=ind_h, nul_h=nul_h,
        eigs_H=eigs_H, eigs_h=eigs_h,
        monodromy=P, monodromy_eigenvalues=P.eigenvalues(),
        tol_rank_H=tol_H, tol_rank_h=tol_h, asymmetry=asym)


# ---------------------------------------------------------------------------
# monodromy-side nullity identities


def complex_kernel_dim(matrix: np.ndarray, lam: complex, tol: float = 1e-6) -> int:
    """dim_C ker(P - lam I) by singular-value thresholding."""
    M = matrix.astype(complex) - lam * np.eye(matrix.shape[0])
    s = np.linalg.svd(M, compute_uv=False)
    scale = max(np.linalg.norm(matrix, 2), 1.0)
    return int(np.sum(s < tol * scale))


def nullity_via_monodromy(P: Propagator, m: int, tol: float = 1e-6) -> int:
    """Sum over m-th roots of unity of the complex kernel dimensions of P."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    total = 0
    for j in range(m):
        lam = np.exp(2j * np.pi * j / m)
        total += complex_kernel_dim(P.matrix, lam, tol)
    return total


def root_of_unity_signature(P: Propagator, m: int, tol: float = 1e-6) -> tuple:
    """Indices of eigenvalues of P that are m-th roots of unity."""
    eigs = np.linalg.eigvals(P.matrix)
    sig = []
    for idx, lam in enumerate(eigs):
        mod = abs(lam)
        if abs(mod - 1.0) > tol:
            continue
        unit = lam / mod
        if abs(unit ** m - 1.0) < tol * max(1, m):
            sig.append(idx)
    return tuple(sig)


def nullity_partition(P: Propagator, m_max: int, tol: float = 1e-6):
    """Partition {1..m_max} into classes of equal root-of-unity signature.

    Returns a list of (representative m_j, nullity at m_j, members); every
    member is divisible by its class representative.
    """
    classes: dict[tuple, list[int]] = {}
    for m in range(1, m_max + 1):
        classes.setdefault(root_of_unity_signature(P, m, tol), []).append(m)
    out = []
    for sig, members in classes.items():
        rep = min(members)
        out.append((rep, nullity_via_monodromy(P, rep, tol), sorted(members)))
    out.sort(key=lambda item: item[0])
    return out


# ---------------------------------------------------------------------------
# loop construction helpers


def auto_h(period: float, v_max: float, rho: float, h_min: int = 16) -> int:
    """Discretization size: every segment shorter than rho/2 in space."""
    return max(h_min, ceil(period * v_max / (0.5 * rho)))


def loop_from_orbit(model: LagrangianModel, s0: TangentState, period: float,
                    h: int, *, rtol: float = 1e-10, atol: float = 1e-10) -> DiscreteLoop:
    """Sample a (near-)periodic trajectory into a broken loop with h points."""
    from . import kernels

    z0 = np.concatenate([s0.q, s0.v])
    res = kernels.propagate(model, z0, period, rtol=rtol, atol=atol, n_samples=h)
    pts = model.torus.wrap(res.states[:h, 0:2])
    return DiscreteLoop(points=pts, tau=period / h)


def resample_loop(model: LagrangianModel, k: float, loop: DiscreteLoop,
                  h_new: int, shift: float = 0.0) -> DiscreteLoop:
    """Re-discretize the broken curve of a loop with h_new equal-time nodes.

    Follows the actual segment arcs (not the polygon), so critical loops
    resample to time-shifted critical loops of the same orbit.
    """
    from . import kernels

    ev = LoopEvaluator(model, k)
    segs = ev.segments(loop)
    period = loop.period
    pts = np.empty((h_new, 2))
    for j in range(h_new):
        t = (shift + j * period / h_new) % period
        i = min(int(t / loop.tau + 1e-12), loop.h - 1)
        t_loc = t - i * loop.tau
        if t_loc < 1e-9 * loop.tau:
            pts[j] = model.torus.wrap(segs[i].q0)
            continue
        z0 = np.concatenate([segs[i].q0, segs[i].nu_minus])
        res = kernels.propagate(model, z0, t_loc)
        pts[j] = model.torus.wrap(res.zf[0:2])
    return DiscreteLoop(points=pts, tau=period / h_new)


def circle_loop(torus: TorusConfig, center, radius: float, h: int, tau: float,
                orientation: int = +1, phase: float = 0.0) -> DiscreteLoop:
    angles = phase + orientation * 2.0 * np.pi * np.arange(h) / h
    pts = np.column_stack([center[0] + radius * np.cos(angles),
                           center[1] + radius * np.sin(angles)])
    return DiscreteLoop(points=torus.wrap(pts), tau=tau)


def perturb_loop(loop: DiscreteLoop, rng: np.random.Generator, amp_q: float,
                 amp_tau: float = 0.0) -> DiscreteLoop:
    pts = loop.points + amp_q * rng.standard_normal(loop.points.shape)
    tau = loop.tau * (1.0 + amp_tau * rng.standard_normal())
    return DiscreteLoop(points=pts, tau=tau)


# ---------------------------------------------------------------------------
# kernel-vector reconstruction (used by the spectral consistency checks)


def reconstruct_kernel_field(model: LagrangianModel, k: float, loop: DiscreteLoop,
                             vec: np.ndarray, sigma: float, n: int = 24):
    """Rebuild the continuous field xi = theta_v + sigma psi from a kernel
    vector of the full Hessian; returns per-segment FieldSamples."""
    from .shoot import boundary_jacobi_field, psi_field

    ev = LoopEvaluator(model, k)
    segs = ev.segments(loop)
    v = np.asarray(vec, dtype=float).reshape(loop.h, 2)
    fields = []
    for i, seg in enumerate(segs):
        th = boundary_jacobi_field(seg, v[i], v[(i + 1) % loop.h], n)
        if sigma != 0.0:
            ps = psi_field(seg, n)
            th.theta = th.theta + sigma * ps.theta
            th.theta_dot = th.theta_dot + sigma * ps.theta_dot
        fields.append(th)
    return fields, segs
