"""Tonelli Lagrangian models on the flat 2-torus.

A model packages exact evaluators for L and all first/second derivatives
in base and fiber directions.  Derivative index conventions used
throughout the library:

    L_q[i]    = dL/dq_i            L_v[j]    = dL/dv_j
    L_vv[i,j] = d2L/dv_i dv_j      L_qq[i,j] = d2L/dq_i dq_j
    L_qv[i,j] = d2L/dq_i dv_j

so the Euler-Lagrange acceleration is  a = L_vv^-1 (L_q - L_qv^T v)  and
the momentum is p = L_v with dp = L_qv^T dq + L_vv dv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClampTooTight, NonConvergence
from .torus import TorusConfig

KIND_FOURIER = 0
KIND_COUNTEREXAMPLE = 1


@dataclass(frozen=True)
class TangentState:
    """Point (q, v) of the tangent bundle, q wrapped to [0, s_i)."""

    q: np.ndarray
    v: np.ndarray

    @staticmethod
    def make(torus: TorusConfig, q, v) -> "TangentState":
        q = torus.wrap(q)
        v = np.asarray(v, dtype=float)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("tangent state must be finite")
        return TangentState(q=q, v=v)


@dataclass(frozen=True)
class KernelDescriptor:
    """Flat parameter vector that the compiled kernels understand."""

    kind: int
    params: np.ndarray


class FourierSeries2D:
    """Real trigonometric polynomial on the torus.

    f(q) = sum_m  a_m cos(w_m . q) + b_m sin(w_m . q),
    w_m = 2 pi (n1_m / s1, n2_m / s2) for integer wave numbers (n1, n2).
    """

    def __init__(self, torus: TorusConfig, terms=()):
        # terms: iterable of (n1, n2, a, b)
        t = np.asarray(list(terms), dtype=float).reshape(-1, 4)
        self.torus = torus
        self.terms = t
        self.omega = 2.0 * np.pi * t[:, :2] / torus.sides  # (m, 2)
        self.a = t[:, 2]
        self.b = t[:, 3]

    def __len__(self):
        return self.terms.shape[0]

    def value(self, q) -> float:
        ph = self.omega @ np.asarray(q, dtype=float)
        return float(self.a @ np.cos(ph) + self.b @ np.sin(ph))

    def grad(self, q) -> np.ndarray:
        ph = self.omega @ np.asarray(q, dtype=float)
        c = -self.a * np.sin(ph) + self.b * np.cos(ph)
        return self.omega.T @ c

    def hess(self, q) -> np.ndarray:
        ph = self.omega @ np.asarray(q, dtype=float)
        c = -self.a * np.cos(ph) - self.b * np.sin(ph)
        return (self.omega.T * c) @ self.omega

    def values_on(self, Q) -> np.ndarray:
        """Vectorized evaluation on an (n, 2) array of points."""
        ph = np.asarray(Q, dtype=float) @ self.omega.T
        return np.cos(ph) @ self.a + np.sin(ph) @ self.b


class LagrangianModel:
    """Base class; subclasses provide the six evaluators.

    Evaluators must accept unwrapped coordinates (they are periodic in q),
    and must be pure: no state is mutated after construction.
    """

    name: str = "model"

    def __init__(self, torus: TorusConfig, parameters: dict | None = None):
        self.torus = torus
        self.parameters = dict(parameters or {})

    # -- evaluators -------------------------------------------------------
    def L(self, q, v) -> float:
        raise NotImplementedError

    def L_q(self, q, v) -> np.ndarray:
        raise NotImplementedError

    def L_v(self, q, v) -> np.ndarray:
        raise NotImplementedError

    def L_vv(self, q, v) -> np.ndarray:
        raise NotImplementedError

    def L_qv(self, q, v) -> np.ndarray:
        raise NotImplementedError

    def L_qq(self, q, v) -> np.ndarray:
        raise NotImplementedError

    def partials(self, q, v):
        """(L, L_q, L_v, L_vv, L_qv, L_qq) in one call; hot-path helper."""
        return (self.L(q, v), self.L_q(q, v), self.L_v(q, v),
                self.L_vv(q, v), self.L_qv(q, v), self.L_qq(q, v))

    # -- optional fast paths ----------------------------------------------
    @property
    def kernel_descriptor(self) -> KernelDescriptor | None:
        """Parameter pack for the compiled kernels, if this model has one."""
        return None

    def hamiltonian(self, q, p):
        """Closed-form dual Hamiltonian, or None to fall back on Newton."""
        return None

    def state(self, q, v) -> TangentState:
        return TangentState.make(self.torus, q, v)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} {self.parameters}>"


# ---------------------------------------------------------------------------
# energy and Legendre duality


def energy(model: LagrangianModel, s: TangentState) -> float:
    """E(q, v) = L_v(q, v) . v - L(q, v)."""
    return float(model.L_v(s.q, s.v) @ s.v - model.L(s.q, s.v))


def energy_qv(model: LagrangianModel, q, v) -> float:
    return float(model.L_v(q, v) @ v - model.L(q, v))


def energy_gradients(model: LagrangianModel, s: TangentState):
    """(E_q, E_v) with E_q = L_qv v - L_q and E_v = L_vv v."""
    E_q = model.L_qv(s.q, s.v) @ s.v - model.L_q(s.q, s.v)
    E_v = model.L_vv(s.q, s.v) @ s.v
    return E_q, E_v


def legendre(model: LagrangianModel, q, p, tol: float = 1e-12, maxit: int = 60):
    """Invert p = L_v(q, .) by damped Newton; returns (v, H(q, p)).

    Fiberwise convexity makes the Newton map contract once inside the
    superlinear regime; backtracking handles poor initial residuals.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.zeros(2)
    r = p - model.L_v(q, v)
    rn = np.hypot(r[0], r[1])
    for _ in range(maxit):
        if rn <= tol:
            H = float(p @ v - model.L(q, v))
            return v, H
        step = np.linalg.solve(model.L_vv(q, v), r)
        t = 1.0
        while t > 1e-12:
            v_new = v + t * step
            r_new = p - model.L_v(q, v_new)
            rn_new = np.hypot(r_new[0], r_new[1])
            if rn_new < rn:
                v, r, rn = v_new, r_new, rn_new
                break
            t *= 0.5
        else:
            break
    if rn <= 1e3 * tol:
        return v, float(p @ v - model.L(q, v))
    raise NonConvergence(f"legendre inversion stalled at residual {rn:.3e}")


# ---------------------------------------------------------------------------
# built-in model families


class KineticModel(LagrangianModel):
    """L = |v|^2 / 2; geodesics of the flat metric."""

    name = "kinetic"

    def __init__(self, torus: TorusConfig):
        super().__init__(torus, {})
        self._desc = _fourier_descriptor(torus, (1.0, 1.0), None, None, None)

    def L(self, q, v):
        return 0.5 * float(v[0] * v[0] + v[1] * v[1])

    def L_q(self, q, v):
        return np.zeros(2)

    def L_v(self, q, v):
        return np.asarray(v, dtype=float).copy()

    def L_vv(self, q, v):
        return np.eye(2)

    def L_qv(self, q, v):
        return np.zeros((2, 2))

    def L_qq(self, q, v):
        return np.zeros((2, 2))

    @property
    def kernel_descriptor(self):
        return self._desc

    def hamiltonian(self, q, p):
        return 0.5 * float(p[0] * p[0] + p[1] * p[1])


class MechanicalModel(LagrangianModel):
    """L = |v|^2 / 2 - V(q) with a trigonometric-polynomial potential."""

    name = "mechanical"

    def __init__(self, torus: TorusConfig, potential: FourierSeries2D):
        super().__init__(torus, {"potential": potential.terms.tolist()})
        self.potential = potential
        self._desc = _fourier_descriptor(torus, (1.0, 1.0), potential, None, None)

    def L(self, q, v):
        return 0.5 * float(v[0] * v[0] + v[1] * v[1]) - self.potential.value(q)

    def L_q(self, q, v):
        return -self.potential.grad(q)

    def L_v(self, q, v):
        return np.asarray(v, dtype=float).copy()

    def L_vv(self, q, v):
        return np.eye(2)

    def L_qv(self, q, v):
        return np.zeros((2, 2))

    def L_qq(self, q, v):
        return -self.potential.hess(q)

    @property
    def kernel_descriptor(self):
        return self._desc

    def hamiltonian(self, q, p):
        return 0.5 * float(p[0] * p[0] + p[1] * p[1]) + self.potential.value(q)


class MagneticModel(LagrangianModel):
    """L = |v|^2 / 2 + A(q) . v - V(q), exact magnetic term A = (A1, A2)."""

    name = "magnetic"

    def __init__(self, torus: TorusConfig, a1: FourierSeries2D, a2: FourierSeries2D,
                 potential: FourierSeries2D | None = None):
        potential = potential if potential is not None else FourierSeries2D(torus, ())
        super().__init__(torus, {
            "a1": a1.terms.tolist(), "a2": a2.terms.tolist(),
            "potential": potential.terms.tolist(),
        })
        self.a1, self.a2, self.potential = a1, a2, potential
        self._desc = _fourier_descriptor(torus, (1.0, 1.0), potential, a1, a2)

    def _A(self, q):
        return np.array([self.a1.value(q), self.a2.value(q)])

    def L(self, q, v):
        return (0.5 * float(v[0] * v[0] + v[1] * v[1])
                + float(self._A(q) @ v) - self.potential.value(q))

    def L_q(self, q, v):
        dA = np.vstack([self.a1.grad(q), self.a2.grad(q)])  # dA[i,j] = dA_i/dq_j
        return dA.T @ np.asarray(v, dtype=float) - self.potential.grad(q)

    def L_v(self, q, v):
        return np.asarray(v, dtype=float) + self._A(q)

    def L_vv(self, q, v):
        return np.eye(2)

    def L_qv(self, q, v):
        # [i,j] = d A_j / d q_i
        return np.column_stack([self.a1.grad(q), self.a2.grad(q)])

    def L_qq(self, q, v):
        v = np.asarray(v, dtype=float)
        return v[0] * self.a1.hess(q) + v[1] * self.a2.hess(q) - self.potential.hess(q)

    @property
    def kernel_descriptor(self):
        return self._desc

    def hamiltonian(self, q, p):
        r = np.asarray(p, dtype=float) - self._A(q)
        return 0.5 * float(r @ r) + self.potential.value(q)


def _fourier_descriptor(torus, masses, potential, a1, a2) -> KernelDescriptor:
    """Pack the quadratic-kinetic + Fourier family for the compiled kernels.

    Layout: [s1, s2, m1, m2, nV, nA1, nA2] then nV+nA1+nA2 rows of
    (n1, n2, a, b), each flattened in order V, A1, A2.
    """
    def rows(fs):
        return fs.terms if fs is not None and len(fs) else np.zeros((0, 4))

    rV, r1, r2 = rows(potential), rows(a1), rows(a2)
    head = np.array([torus.sides[0], torus.sides[1], masses[0], masses[1],
                     len(rV), len(r1), len(r2)], dtype=float)
    params = np.concatenate([head, rV.ravel(), r1.ravel(), r2.ravel()])
    return KernelDescriptor(kind=KIND_FOURIER, params=params)


# ---------------------------------------------------------------------------
# quadratic-at-infinity clamp


def _smoothstep(u: float):
    """C^2 quintic step on [0,1]: value, first and second derivative."""
    if u <= 0.0:
        return 0.0, 0.0, 0.0
    if u >= 1.0:
        return 1.0, 0.0, 0.0
    s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    ds = 30.0 * u * u * (1.0 + u * (-2.0 + u))
    dds = 60.0 * u * (1.0 + u * (-3.0 + 2.0 * u))
    return s, ds, dds


class ClampedModel(LagrangianModel):
    """Blend of an inner model with |v|^2 / 2 outside a velocity ball.

    The blend weight is a C^2 step in x = |v|^2 ramping over
    [ (R/2)^2, R^2 ] where R is the clamp radius; the model is untouched
    for |v| <= R/2 and exactly kinetic for |v| >= R.
    """

    name = "clamped"

    def __init__(self, inner: LagrangianModel, r_clamp: float):
        super().__init__(inner.torus, {"inner": inner.name, "r_clamp": r_clamp})
        self.inner = inner
        self.r_clamp = float(r_clamp)
        self._x0 = (0.5 * r_clamp) ** 2
        self._x1 = r_clamp ** 2

    def _beta(self, v):
        x = float(v[0] * v[0] + v[1] * v[1])
        u = (x - self._x0) / (self._x1 - self._x0)
        s, ds, dds = _smoothstep(u)
        w = 1.0 / (self._x1 - self._x0)
        return s, ds * w, dds * w * w  # beta, beta', beta'' in x

    def L(self, q, v):
        b, _, _ = self._beta(v)
        Li = self.inner.L(q, v)
        if b == 0.0:
            return Li
        K = 0.5 * float(v[0] * v[0] + v[1] * v[1])
        return Li + b * (K - Li)

    def L_q(self, q, v):
        b, _, _ = self._beta(v)
        return (1.0 - b) * self.inner.L_q(q, v)

    def L_v(self, q, v):
        v = np.asarray(v, dtype=float)
        b, db, _ = self._beta(v)
        Lv = self.inner.L_v(q, v)
        if b == 0.0 and db == 0.0:
            return Lv
        K = 0.5 * float(v @ v)
        D = K - self.inner.L(q, v)
        return (1.0 - b) * Lv + b * v + 2.0 * db * D * v

    def L_vv(self, q, v):
        v = np.asarray(v, dtype=float)
        b, db, ddb = self._beta(v)
        Lvv = self.inner.L_vv(q, v)
        if b == 0.0 and db == 0.0:
            return Lvv
        K = 0.5 * float(v @ v)
        D = K - self.inner.L(q, v)
        g = v - self.inner.L_v(q, v)  # dD/dv
        out = (1.0 - b) * Lvv + (b + 2.0 * db * D) * np.eye(2)
        out += 4.0 * ddb * D * np.outer(v, v)
        out += 2.0 * db * (np.outer(g, v) + np.outer(v, g))
        return out

    def L_qv(self, q, v):
        v = np.asarray(v, dtype=float)
        b, db, _ = self._beta(v)
        out = (1.0 - b) * self.inner.L_qv(q, v)
        if db != 0.0:
            out -= 2.0 * db * np.outer(self.inner.L_q(q, v), v)
        return out

    def L_qq(self, q, v):
        b, _, _ = self._beta(v)
        return (1.0 - b) * self.inner.L_qq(q, v)


def max_speed_on_level(model: LagrangianModel, k: float, n_grid: int = 17,
                       n_dirs: int = 16) -> float:
    """Max |v| over a sampled grid of the energy level E = k.

    Along each ray v = s u the energy is increasing for s past the
    fiberwise minimum, so the crossing is found by doubling + bisection.
    """
    sides = model.torus.sides
    best = 0.0
    thetas = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
    for qx in np.linspace(0.0, sides[0], n_grid, endpoint=False):
        for qy in np.linspace(0.0, sides[1], n_grid, endpoint=False):
            q = np.array([qx, qy])
            for th in thetas:
                u = np.array([np.cos(th), np.sin(th)])
                lo, hi = 0.0, 1.0
                budget = 0
                while energy_qv(model, q, hi * u) < k:
                    lo, hi = hi, 2.0 * hi
                    budget += 1
                    if budget > 60:
                        raise ClampTooTight("energy level unbounded along ray")
                if energy_qv(model, q, lo * u) >= k:
                    continue  # level slips below this fiber point
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if energy_qv(model, q, mid * u) < k:
                        lo = mid
                    else:
                        hi = mid
                best = max(best, hi)
    return best


def clamp_quadratic_at_infinity(model: LagrangianModel, k: float) -> LagrangianModel:
    """Return a model equal to the input near E <= k and kinetic at infinity.

    The clamp radius is twice the sampled max speed on the level E = k, so
    the returned model agrees with the input for |v| <= r_clamp / 2 and is
    exactly |v|^2 / 2 for |v| >= r_clamp.
    """
    if isinstance(model, KineticModel):
        return model
    vmax = max_speed_on_level(model, k)
    if vmax == 0.0:
        raise ClampTooTight(f"energy level k={k} has empty velocity range")
    return ClampedModel(model, r_clamp=2.0 * vmax)


# ---------------------------------------------------------------------------
# registry used by the CLI config loader

_REGISTRY: dict[str, callable] = {}


def register_model(name: str, factory):
    _REGISTRY[name] = factory


def build_model(name: str, params: dict) -> LagrangianModel:
    if name not in _REGISTRY:
        raise KeyError(f"unknown model '{name}'; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name](params)


def _terms_from(params, key):
    return params.get(key, [])


def check_param_keys(params: dict, allowed: set, model_name: str):
    unknown = set(params) - allowed
    if unknown:
        raise KeyError(f"model '{model_name}' does not accept {sorted(unknown)}")


def _build_kinetic(params: dict) -> LagrangianModel:
    check_param_keys(params, {"sides"}, "kinetic")
    torus = TorusConfig(tuple(params.get("sides", (1.0, 1.0))))
    return KineticModel(torus)


def _build_mechanical(params: dict) -> LagrangianModel:
    check_param_keys(params, {"sides", "v_terms"}, "mechanical")
    torus = TorusConfig(tuple(params.get("sides", (2 * np.pi, 2 * np.pi))))
    V = FourierSeries2D(torus, _terms_from(params, "v_terms"))
    return MechanicalModel(torus, V)


def _build_magnetic(params: dict) -> LagrangianModel:
    check_param_keys(params, {"sides", "a1_terms", "a2_terms", "v_terms"}, "magnetic")
    torus = TorusConfig(tuple(params.get("sides", (2 * np.pi, 2 * np.pi))))
    a1 = FourierSeries2D(torus, _terms_from(params, "a1_terms"))
    a2 = FourierSeries2D(torus, _terms_from(params, "a2_terms"))
    V = FourierSeries2D(torus, _terms_from(params, "v_terms"))
    return MagneticModel(torus, a1, a2, V)


def _build_strip_magnetic(params: dict) -> LagrangianModel:
    check_param_keys(params, {"strength"}, "strip-magnetic")
    return standard_magnetic_fixture(float(params.get("strength", 2.0)))


def _build_island_magnetic(params: dict) -> LagrangianModel:
    check_param_keys(params, {"strength"}, "island-magnetic")
    return island_magnetic_fixture(float(params.get("strength", 2.0)))


register_model("kinetic", _build_kinetic)
register_model("mechanical", _build_mechanical)
register_model("magnetic", _build_magnetic)
register_model("strip-magnetic", _build_strip_magnetic)
register_model("island-magnetic", _build_island_magnetic)


def standard_magnetic_fixture(strength: float = 2.0) -> MagneticModel:
    """Oscillating exact-magnetic field A2 = s sin(q1) on the 2 pi torus.

    The magnetic 2-form s cos(q1) dq1 ^ dq2 changes sign along vertical
    strips; the zero-field lines q1 = +-pi/2 carry straight winding orbits
    and the strips make the action unbounded below at low energies.
    """
    torus = TorusConfig((2 * np.pi, 2 * np.pi))
    a1 = FourierSeries2D(torus, ())
    a2 = FourierSeries2D(torus, [(1, 0, 0.0, strength)])
    return MagneticModel(torus, a1, a2)


def island_magnetic_fixture(strength: float = 2.0) -> MagneticModel:
    """Oscillating field s (cos q1 + cos q2) with sign islands, 2 pi torus.

    The positive-field island around the origin is bounded, so the
    low-energy negative-action minimizers are contractible ovals inside
    it (and reversed ovals in the negative island around (pi, pi)).
    """
    torus = TorusConfig((2 * np.pi, 2 * np.pi))
    a1 = FourierSeries2D(torus, [(0, 1, 0.0, -strength)])
    a2 = FourierSeries2D(torus, [(1, 0, 0.0, strength)])
    return MagneticModel(torus, a1, a2)
