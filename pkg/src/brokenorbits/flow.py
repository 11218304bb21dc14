"""Euler-Lagrange flow, its linearization, and monodromy matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EnergyDriftExceeded, NotCritical
from .models import LagrangianModel, TangentState, energy_qv

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-10


@dataclass
class Trajectory:
    """Sampled solution of the Euler-Lagrange equation.

    `states` rows are (q1, q2, v1, v2) with q wrapped to the fundamental
    domain; `times` is strictly increasing.
    """

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    energy_drift: float
    model: LagrangianModel = field(repr=False)

    @property
    def final(self) -> TangentState:
        return TangentState.make(self.model.torus, self.states[-1, 0:2],
                                 self.states[-1, 2:4])

    def export_columns(self) -> np.ndarray:
        """(n, 5) array of (t, q1, q2, v1, v2) for plain-text plotting."""
        return np.column_stack([self.times, self.states])

    def save(self, path):
        np.savetxt(path, self.export_columns(),
                   header="t q1 q2 v1 v2", comments="# ")


@dataclass
class Propagator:
    """Action of the linearized flow over time t on (dq, dv)."""

    t: float
    matrix: np.ndarray

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def integrate(model: LagrangianModel, s0: TangentState, t: float, *,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
              n_samples: int = 64, drift_tol: float | None = None) -> Trajectory:
    """Trajectory of the flow from s0 over time t, energy-checked.

    The integration runs in the unwrapped chart; stored sample positions
    are wrapped.  Raises EnergyDriftExceeded when the a-posteriori energy
    variation exceeds the tolerance (default scales with |E0|, 1 and t).
    """
    z0 = np.concatenate([s0.q, s0.v])
    res = kernels.propagate(model, z0, t, rtol=rtol, atol=atol,
                            n_samples=max(2, n_samples))
    E = np.array([energy_qv(model, st[0:2], st[2:4]) for st in res.states])
    drift = float(np.max(np.abs(E - E[0])))
    if drift_tol is None:
        drift_tol = 1e-6 * (1.0 + abs(E[0])) * max(1.0, abs(t))
    if drift > drift_tol:
        raise EnergyDriftExceeded(
            f"energy drift {drift:.3e} exceeds tolerance {drift_tol:.3e}")
    states = res.states.copy()
    states[:, 0:2] = model.torus.wrap(states[:, 0:2])
    return Trajectory(times=res.ts, states=states, energy=E,
                      energy_drift=drift, model=model)


def flow_state(model: LagrangianModel, s0: TangentState, t: float, *,
               rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> TangentState:
    """Endpoint phi^t(s0) without sampling; cheaper than integrate()."""
    z0 = np.concatenate([s0.q, s0.v])
    res = kernels.propagate(model, z0, t, rtol=rtol, atol=atol)
    return TangentState.make(model.torus, res.zf[0:2], res.zf[2:4])


def linearized_flow(model: LagrangianModel, s0: TangentState, t: float, *,
                    rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Propagator:
    """d(phi^t) at s0, integrated alongside the base trajectory."""
    if t == 0.0:
        return Propagator(t=0.0, matrix=np.eye(4))
    z0 = np.concatenate([s0.q, s0.v])
    res = kernels.propagate(model, z0, t, rtol=rtol, atol=atol, want_stm=True)
    return Propagator(t=t, matrix=res.stm)


def monodromy(model: LagrangianModel, loop, k: float, *, tol_crit: float = 1e-6,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Propagator:
    """Linearized flow over one full period of a critical broken loop.

    The loop must satisfy the criticality test (gradient norm below
    tol_crit); the initial state is the first segment's outgoing velocity.
    """
    from . import action as action_mod  # local import; action builds on flow

    ev = action_mod.LoopEvaluator(model, k, rtol=rtol, atol=atol)
    grad, segments = ev.gradient_and_segments(loop)
    gnorm = grad.norm()
    if gnorm > tol_crit:
        raise NotCritical(f"loop gradient norm {gnorm:.3e} > {tol_crit:.3e}")
    s0 = TangentState.make(model.torus, loop.points[0], segments[0].nu_minus)
    return linearized_flow(model, s0, loop.h * loop.tau, rtol=rtol, atol=atol)
