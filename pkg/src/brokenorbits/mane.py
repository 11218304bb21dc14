"""Critical-energy estimation: stationary threshold and two-sided bounds.

The stationary threshold e0 is the max over the torus of the energy of
rest states, computed by grid scan plus local polish.  Upper bounds for
the critical value come from explicit families of smooth functions
satisfying the Hamilton-Jacobi inequality (linear part plus truncated
Fourier modes, spanning all cohomology classes of the torus); lower
bounds come from explicit contractible loops with negative action, which
double as re-verifiable certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .action import DiscreteLoop, LoopEvaluator
from .models import FourierSeries2D, LagrangianModel, energy_qv, legendre
from .search import circle_seed_family


def e0(model: LagrangianModel, n_grid: int = 128) -> float:
    """max over q of the rest energy E(q, 0), grid plus Nelder-Mead polish."""
    torus = model.torus
    xs = np.linspace(0, torus.sides[0], n_grid, endpoint=False)
    ys = np.linspace(0, torus.sides[1], n_grid, endpoint=False)
    zero = np.zeros(2)
    best_val = -np.inf
    best_q = None
    for x in xs:
        row = [energy_qv(model, np.array([x, y]), zero) for y in ys]
        j = int(np.argmax(row))
        if row[j] > best_val:
            best_val = row[j]
            best_q = np.array([x, ys[j]])

    res = minimize(lambda q: -energy_qv(model, q, zero), best_q,
                   method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400})
    return float(max(best_val, -res.fun))


def _hamiltonian(model: LagrangianModel, q, p) -> float:
    closed = model.hamiltonian(q, p)
    if closed is not None:
        return float(closed)
    _, H = legendre(model, q, p)
    return H


def _mode_list(family_size: int):
    """Half-lattice of nonzero integer modes up to the given order."""
    modes = []
    for n1 in range(-family_size, family_size + 1):
        for n2 in range(-family_size, family_size + 1):
            if (n1, n2) == (0, 0):
                continue
            if (n1 > 0) or (n1 == 0 and n2 > 0):
                modes.append((n1, n2))
    return modes


@dataclass
class SubsolutionCertificate:
    """A 1-form p_bar + du with max_q H(q, p_bar + du(q)) <= value."""

    pbar: list
    modes: list
    coeffs: list           # (a, b) per mode: a cos + b sin
    grid_n: int
    lipschitz_slack: float
    value: float

    def as_dict(self) -> dict:
        return {
            "pbar": [float(v) for v in self.pbar],
            "modes": [[int(a), int(b)] for a, b in self.modes],
            "coeffs": [[float(a), float(b)] for a, b in self.coeffs],
            "grid_n": self.grid_n,
            "lipschitz_slack": self.lipschitz_slack,
            "value": self.value,
        }


def _grid_max_H(model: LagrangianModel, pbar, u: FourierSeries2D, n: int):
    torus = model.torus
    xs = np.linspace(0, torus.sides[0], n, endpoint=False)
    ys = np.linspace(0, torus.sides[1], n, endpoint=False)
    vmax = -np.inf
    for x in xs:
        for y in ys:
            q = np.array([x, y])
            vmax = max(vmax, _hamiltonian(model, q, pbar + u.grad(q)))
    return vmax


def c_upper_bound(model: LagrangianModel, family_size: int = 2, *,
                  grid_coarse: int = 24, grid_fine: int = 96,
                  maxiter: int = 400):
    """Minimize max_q H(q, pbar + du) over the truncated closed-1-form family.

    Any member of the family gives a rigorous upper bound for the critical
    value.  Families are optimized in increasing size with warm starts
    (smaller-family optima zero-padded into the larger family), which makes
    the reported bound weakly decreasing in family_size by construction.
    The number returned is the fine-grid maximum inflated by a
    finite-difference Lipschitz slack so it stays a true upper bound.
    Returns (value, SubsolutionCertificate).
    """
    torus = model.torus
    modes = _mode_list(family_size)

    def unpack(x, mode_set):
        pbar = x[0:2]
        terms = [(m[0], m[1], x[2 + 2 * i], x[3 + 2 * i])
                 for i, m in enumerate(mode_set)]
        return pbar, FourierSeries2D(torus, terms)

    def certified_max(x, mode_set):
        pbar, u = unpack(x, mode_set)
        return _grid_max_H(model, pbar, u, grid_fine)

    best_x = np.zeros(2 + 2 * len(modes))
    best_cert = certified_max(best_x, modes)
    carry_x = np.zeros(2)
    prev_modes: list = []
    for size in range(1, family_size + 1):
        mode_set = _mode_list(size)
        x0 = np.zeros(2 + 2 * len(mode_set))
        x0[0:2] = carry_x[0:2]
        for i, m in enumerate(prev_modes):  # zero-padded warm start
            j = mode_set.index(m)
            x0[2 + 2 * j] = carry_x[2 + 2 * i]
            x0[3 + 2 * j] = carry_x[3 + 2 * i]

        def objective(x, mode_set=mode_set):
            pbar, u = unpack(x, mode_set)
            return _grid_max_H(model, pbar, u, grid_coarse)

        res = minimize(objective, x0, method="Powell",
                       options={"maxiter": maxiter, "xtol": 1e-8, "ftol": 1e-10})
        carry_x = res.x if res.fun <= objective(x0) else x0
        prev_modes = mode_set
        # keep whichever member certifies best on the fine grid
        padded = np.zeros(2 + 2 * len(modes))
        padded[0:2] = carry_x[0:2]
        for i, m in enumerate(mode_set):
            j = modes.index(m)
            padded[2 + 2 * j] = carry_x[2 + 2 * i]
            padded[3 + 2 * j] = carry_x[3 + 2 * i]
        cert_val = certified_max(padded, modes)
        if cert_val < best_cert:
            best_cert, best_x = cert_val, padded

    x_best = best_x
    pbar, u = unpack(x_best, modes)

    # certify on the fine grid with a Lipschitz inflation
    torus_step = max(torus.sides) / grid_fine
    xs = np.linspace(0, torus.sides[0], grid_fine, endpoint=False)
    ys = np.linspace(0, torus.sides[1], grid_fine, endpoint=False)
    vals = np.empty((grid_fine, grid_fine))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            q = np.array([x, y])
            vals[i, j] = _hamiltonian(model, q, pbar + u.grad(q))
    gx = (np.roll(vals, -1, axis=0) - np.roll(vals, 1, axis=0)) / (2 * torus.sides[0] / grid_fine)
    gy = (np.roll(vals, -1, axis=1) - np.roll(vals, 1, axis=1)) / (2 * torus.sides[1] / grid_fine)
    lip = float(np.max(np.hypot(gx, gy)))
    slack = lip * torus_step * np.sqrt(2.0) / 2.0
    value = float(np.max(vals) + slack)
    cert = SubsolutionCertificate(
        pbar=list(map(float, pbar)), modes=modes,
        coeffs=[(float(x_best[2 + 2 * i]), float(x_best[3 + 2 * i]))
                for i in range(len(modes))],
        grid_n=grid_fine, lipschitz_slack=slack, value=value)
    return value, cert


def verify_c_upper(model: LagrangianModel, cert: SubsolutionCertificate,
                   tol: float = 1e-9) -> bool:
    terms = [(m[0], m[1], a, b) for m, (a, b) in zip(cert.modes, cert.coeffs)]
    u = FourierSeries2D(model.torus, terms)
    vmax = _grid_max_H(model, np.asarray(cert.pbar, dtype=float), u, cert.grid_n)
    return vmax + cert.lipschitz_slack <= cert.value + tol


@dataclass
class LoopCertificate:
    """Contractible broken loop with negative action at energy k."""

    k: float
    points: list
    tau: float
    action: float

    def as_dict(self) -> dict:
        return {"k": self.k, "points": self.points, "tau": self.tau,
                "action": self.action}


def verify_c_lower(model: LagrangianModel, cert: LoopCertificate,
                   tol: float = 1e-9) -> bool:
    loop = DiscreteLoop(points=np.asarray(cert.points, dtype=float), tau=cert.tau)
    val = LoopEvaluator(model, cert.k).action(loop)
    return val < 0 and abs(val - cert.action) <= tol * (1 + abs(cert.action)) \
        and loop.winding(model.torus) == (0, 0)


def c_lower_bound(model: LagrangianModel, k_grid, *, h: int = 24):
    """Largest grid energy admitting an explicit negative-action loop.

    Circle families are evaluated analytically; a hit is converted to a
    broken loop and re-verified through segment shooting before being
    accepted as a certificate.  Returns (value, LoopCertificate or None).
    """
    e0_val = e0(model)
    best_k = e0_val
    best_cert = None
    for k in sorted(np.atleast_1d(k_grid), reverse=True):
        if k <= e0_val:
            continue
        seeds = circle_seed_family(model, float(k))
        if seeds[0].action >= 0:
            continue
        loop = seeds[0].loop(model.torus, h)
        action = LoopEvaluator(model, float(k)).action(loop)
        if action < 0 and loop.winding(model.torus) == (0, 0):
            best_k = float(k)
            best_cert = LoopCertificate(k=float(k), points=loop.points.tolist(),
                                        tau=loop.tau, action=float(action))
            break
    return best_k, best_cert


@dataclass
class ManeEstimate:
    e0: float
    c_upper: float
    c_lower: float
    upper_certificate: SubsolutionCertificate | None = None
    lower_certificate: LoopCertificate | None = None

    def as_dict(self) -> dict:
        return {
            "type": "mane",
            "e0": self.e0,
            "c_upper": self.c_upper,
            "c_lower": self.c_lower,
            "upper_certificate": (self.upper_certificate.as_dict()
                                  if self.upper_certificate else None),
            "lower_certificate": (self.lower_certificate.as_dict()
                                  if self.lower_certificate else None),
        }


def mane_estimate(model: LagrangianModel, *, family_size: int = 2,
                  k_grid=None, h: int = 24) -> ManeEstimate:
    """Full interval estimate e0 <= [c_lower, c_upper] with certificates."""
    e0_val = e0(model)
    c_up, up_cert = c_upper_bound(model, family_size)
    c_up = max(c_up, e0_val)  # the critical value never sits below e0
    if k_grid is None:
        if c_up > e0_val + 1e-9:
            k_grid = e0_val + (c_up - e0_val) * np.linspace(0.05, 0.95, 10)
        else:
            k_grid = []
    c_lo, lo_cert = c_lower_bound(model, k_grid, h=h)
    return ManeEstimate(e0=e0_val, c_upper=float(c_up), c_lower=float(c_lo),
                        upper_certificate=up_cert, lower_certificate=lo_cert)
