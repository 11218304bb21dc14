"""Hot-kernel dispatch: compiled extension when available, numpy twin otherwise.

The compiled path only understands models that publish a kernel
descriptor (the quadratic-kinetic Fourier family and the closed-form
counterexample system); anything else, e.g. clamped or user-subclassed
models, runs on the pure path.  Set BROKENORBITS_FORCE_PURE=1 to pin the
pure path regardless.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py as _py

try:  # pragma: no cover - exercised via the parity tests when built
    from . import _kernels_cy as _cy

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover
    _cy = None
    HAVE_COMPILED = False


@dataclass
class KernelResult:
    zf: np.ndarray          # final (q, v), unwrapped chart
    action: float           # integral of L over the segment
    stm: np.ndarray | None  # (4,4) transition matrix in (dq, dv) coordinates
    ts: np.ndarray | None
    states: np.ndarray | None


def backend_name(model=None) -> str:
    if model is not None and _descriptor(model) is None:
        return "pure"
    return "compiled" if HAVE_COMPILED else "pure"


def _descriptor(model):
    if not HAVE_COMPILED or os.environ.get("BROKENORBITS_FORCE_PURE"):
        return None
    return model.kernel_descriptor


def propagate(model, z0, t, *, rtol=1e-10, atol=1e-10, want_stm=False,
              n_samples=0) -> KernelResult:
    desc = _descriptor(model)
    if desc is not None:
        zf, action, stm, ts, states = _cy.propagate(
            desc.kind, desc.params, np.asarray(z0, dtype=float), float(t),
            rtol, atol, 1 if want_stm else 0, int(n_samples))
    else:
        zf, action, stm, ts, states = _py.propagate(
            model, z0, t, rtol, atol, want_stm, n_samples)
    return KernelResult(zf=zf, action=action, stm=stm, ts=ts, states=states)


def shoot_fixed(model, q0, target, tau, v_guess, *, rtol=1e-10, atol=1e-10,
                tol=1e-11, maxit=50):
    """Returns (v0, v1, action, stm, iters, resid)."""
    desc = _descriptor(model)
    if desc is not None:
        return _cy.shoot_fixed(
            desc.kind, desc.params, np.asarray(q0, dtype=float),
            np.asarray(target, dtype=float), float(tau),
            np.asarray(v_guess, dtype=float), rtol, atol, tol, int(maxit))
    return _py.shoot_fixed(model, q0, target, tau, v_guess, rtol, atol, tol, maxit)
