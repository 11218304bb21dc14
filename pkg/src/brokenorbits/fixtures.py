"""Closed-form reference system with exactly two periodic orbits per level.

Two decoupled rotator planes with frequencies 1/r1 and 1/r2 (their ratio
irrational), glued onto a side-2R torus through a monotone C^2 profile
that flattens the potential away from the origin.  Inside the region
where the profile is the identity, the Hamiltonian flow is an exact
linear rotation, which gives closed-form trajectories, monodromies and
index values for oracle testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import floor, sqrt

import numpy as np

from .errors import BrokenOrbitsError
from .models import LagrangianModel, TangentState, register_model
from .torus import TorusConfig


class LeavesPolydisk(BrokenOrbitsError):
    """Initial condition leaves the region where the flow is linear."""


def _rational_within(x: float, tol: float, qmax: int) -> bool:
    for q in range(1, qmax + 1):
        p = round(x * q)
        if abs(x - p / q) < tol:
            return True
    return False


@dataclass(frozen=True)
class CounterexampleParams:
    """Plane frequencies (via r1 < r2, irrational ratio) and plateau level R."""

    r1: float = 1.0
    r2: float = sqrt(2.0)
    R: float = 2.0

    def __post_init__(self):
        if not (0 < self.r1 < self.r2 < self.R):
            raise ValueError("need 0 < r1 < r2 < R")
        if self.R <= 1.0:
            # The plateau chi = R must be reached inside |q_i| <= R, which
            # requires R^2 >= R; otherwise the model does not glue to a torus.
            raise ValueError("need R > 1 so the flat plateau fits the torus tile")
        if _rational_within(self.r1 / self.r2, 1e-9, 64):
            raise ValueError("r1/r2 is within 1e-9 of a rational p/q with q <= 64")

    # -- the clamp profile: identity on [0, r2], constant R beyond R --------
    def chi(self, x: float) -> float:
        if x <= self.r2:
            return x
        if x >= self.R:
            return self.R
        u = (x - self.r2) / (self.R - self.r2)
        g = u * (1.0 + u * u * (4.0 + u * (-7.0 + 3.0 * u)))
        return self.r2 + (self.R - self.r2) * g

    def chi_d1(self, x: float) -> float:
        if x <= self.r2:
            return 1.0
        if x >= self.R:
            return 0.0
        u = (x - self.r2) / (self.R - self.r2)
        return 1.0 + u * u * (12.0 + u * (-28.0 + 15.0 * u))

    def chi_d2(self, x: float) -> float:
        if x <= self.r2 or x >= self.R:
            return 0.0
        u = (x - self.r2) / (self.R - self.r2)
        return (u * (24.0 + u * (-84.0 + 60.0 * u))) / (self.R - self.r2)


class CounterexampleModel(LagrangianModel):
    """Dual Lagrangian of the two-rotator system on the side-2R torus.

    L(q, v) = (r1 v1^2 + r2 v2^2)/2 - (chi(q1^2)/r1 + chi(q2^2)/r2)/2,
    evaluated on the centered fundamental tile [-R, R)^2.
    """

    name = "counterexample"

    def __init__(self, params: CounterexampleParams):
        torus = TorusConfig((2.0 * params.R, 2.0 * params.R))
        super().__init__(torus, {"r1": params.r1, "r2": params.r2, "R": params.R})
        self.p = params
        self._r = np.array([params.r1, params.r2])
        from .models import KernelDescriptor, KIND_COUNTEREXAMPLE
        self._desc = KernelDescriptor(
            kind=KIND_COUNTEREXAMPLE,
            params=np.array([params.r1, params.r2, params.R], dtype=float))

    def _qc(self, q):
        return self.torus.wrap_centered(q)

    def L(self, q, v):
        qc = self._qc(q)
        kin = 0.5 * (self._r[0] * v[0] * v[0] + self._r[1] * v[1] * v[1])
        pot = 0.5 * (self.p.chi(qc[0] * qc[0]) / self._r[0]
                     + self.p.chi(qc[1] * qc[1]) / self._r[1])
        return kin - pot

    def L_q(self, q, v):
        qc = self._qc(q)
        return np.array([-self.p.chi_d1(qc[0] * qc[0]) * qc[0] / self._r[0],
                         -self.p.chi_d1(qc[1] * qc[1]) * qc[1] / self._r[1]])

    def L_v(self, q, v):
        return self._r * np.asarray(v, dtype=float)

    def L_vv(self, q, v):
        return np.diag(self._r)

    def L_qv(self, q, v):
        return np.zeros((2, 2))

    def L_qq(self, q, v):
        qc = self._qc(q)
        d = np.empty(2)
        for i in range(2):
            x = qc[i] * qc[i]
            d[i] = -(2.0 * x * self.p.chi_d2(x) + self.p.chi_d1(x)) / self._r[i]
        return np.diag(d)

    @property
    def kernel_descriptor(self):
        return self._desc

    def hamiltonian(self, q, p):
        qc = self._qc(q)
        return 0.5 * ((self.p.chi(qc[0] * qc[0]) + p[0] * p[0]) / self._r[0]
                      + (self.p.chi(qc[1] * qc[1]) + p[1] * p[1]) / self._r[1])


def counterexample_model(params: CounterexampleParams | None = None) -> CounterexampleModel:
    return CounterexampleModel(params or CounterexampleParams())


def _build_counterexample(params: dict) -> CounterexampleModel:
    from .models import check_param_keys

    check_param_keys(params, {"r1", "r2", "big_r"}, "counterexample")
    p = CounterexampleParams(r1=float(params.get("r1", 1.0)),
                             r2=float(params.get("r2", sqrt(2.0))),
                             R=float(params.get("big_r", 2.0)))
    return CounterexampleModel(p)


register_model("counterexample", _build_counterexample)


# ---------------------------------------------------------------------------
# closed forms


def closed_form_flow(params: CounterexampleParams, t: float, z0) -> np.ndarray:
    """Exact flow of a phase point (q1, q2, p1, p2) in the linear region.

    Each plane z_i = q_i + i p_i rotates by exp(-i t / r_i); moduli are
    conserved, so the linear-region condition |z_i|^2 <= r2 is checked
    once on the initial point.
    """
    z0 = np.asarray(z0, dtype=float)
    r = (params.r1, params.r2)
    out = np.empty(4)
    for i in range(2):
        zi = complex(z0[i], z0[2 + i])
        if abs(zi) ** 2 > params.r2 + 1e-12:
            raise LeavesPolydisk(
                f"|z_{i+1}|^2 = {abs(zi)**2:.6f} exceeds the linear region bound {params.r2:.6f}")
        zt = zi * np.exp(-1j * t / r[i])
        out[i], out[2 + i] = zt.real, zt.imag
    return out


@dataclass
class ReferenceOrbit:
    """One of the two closed orbits at energy k, as exact state functions."""

    params: CounterexampleParams
    plane: int            # 0: fast plane (period 2 pi r1), 1: slow plane
    k: float
    period: float = field(init=False)
    amplitude: float = field(init=False)

    def __post_init__(self):
        r = (self.params.r1, self.params.r2)[self.plane]
        self.period = 2.0 * np.pi * r
        self.amplitude = sqrt(2.0 * r * self.k)

    def phase_point(self, t: float) -> np.ndarray:
        z = np.zeros(4)
        z[self.plane] = self.amplitude
        return closed_form_flow(self.params, t, z)

    def tangent_state(self, t: float, model: CounterexampleModel) -> TangentState:
        z = self.phase_point(t)
        v = z[2:4] / np.array([self.params.r1, self.params.r2])
        return TangentState.make(model.torus, z[0:2], v)

    def loop(self, model: CounterexampleModel, h: int, shift: float = 0.0):
        """Broken-orbit sample with h points; exact up to wrapping."""
        from .action import DiscreteLoop

        tau = self.period / h
        pts = np.empty((h, 2))
        vel = np.empty((h, 2))
        for i in range(h):
            z = self.phase_point(shift + i * tau)
            pts[i] = model.torus.wrap(z[0:2])
            vel[i] = z[2:4] / np.array([self.params.r1, self.params.r2])
        return DiscreteLoop(points=pts, tau=tau), vel


def reference_orbits(params: CounterexampleParams, k: float):
    """The two periodic orbits at energy k in (0, 1/2)."""
    if not (0.0 < k < 0.5):
        raise ValueError("closed forms require 0 < k < 1/2")
    return ReferenceOrbit(params, 0, k), ReferenceOrbit(params, 1, k)


def maslov_indices(params: CounterexampleParams) -> tuple[int, int]:
    """Fixed-period index of the two orbits: 2(floor(r_i/r_j) + 1)."""
    return (2 * (floor(params.r1 / params.r2) + 1),
            2 * (floor(params.r2 / params.r1) + 1))


def monodromy_eigenvalues(params: CounterexampleParams, plane: int) -> np.ndarray:
    """{1, 1, exp(+-2 pi i rho)} with rho the period ratio of the planes."""
    if plane == 0:
        rho = params.r1 / params.r2
    else:
        rho = params.r2 / params.r1
    w = np.exp(2j * np.pi * rho)
    return np.array([1.0 + 0j, 1.0 + 0j, w, np.conj(w)])
