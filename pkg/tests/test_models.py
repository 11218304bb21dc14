import numpy as np
import pytest

from brokenorbits import (MechanicalModel,
                          clamp_quadratic_at_infinity, energy, energy_gradients,
                          legendre)
from brokenorbits.models import FourierSeries2D, energy_qv

from conftest import random_state


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x, dtype=float)
    for i in range(len(x)):
        xp = np.array(x, dtype=float)
        xm = np.array(x, dtype=float)
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


ALL_MODELS = ["kinetic", "mechanical", "magnetic_strip", "magnetic_island",
              "cx_model"]


@pytest.fixture()
def model(request):
    return request.getfixturevalue(request.param)


# -- energy ------------------------------------------------------------------

def test_energy_kinetic(kinetic):
    s = kinetic.state((0, 0), (1, 0))
    assert energy(kinetic, s) == pytest.approx(0.5, abs=1e-15)


def test_energy_mechanical(mechanical, rng):
    for _ in range(5):
        q, v = random_state(mechanical, rng)
        s = mechanical.state(q, v)
        V = mechanical.potential.value(s.q)
        assert energy(mechanical, s) == pytest.approx(0.5 * v @ v + V, rel=1e-12)


def test_energy_gradients_kinetic(kinetic):
    s = kinetic.state((0, 0), (2, 0))
    E_q, E_v = energy_gradients(kinetic, s)
    np.testing.assert_allclose(E_q, [0, 0], atol=1e-15)
    np.testing.assert_allclose(E_v, [2, 0], atol=1e-15)


def test_energy_gradients_rest_point(twopi_torus):
    V = FourierSeries2D(twopi_torus, [(1, 0, 1.0, 0.0)])  # cos(q1)
    model = MechanicalModel(twopi_torus, V)
    s = model.state((0, 0), (0, 0))
    E_q, E_v = energy_gradients(model, s)
    np.testing.assert_allclose(E_q, [0, 0], atol=1e-15)  # -sin(0) = 0
    np.testing.assert_allclose(E_v, [0, 0], atol=1e-15)


@pytest.mark.parametrize("model", ALL_MODELS, indirect=True)
def test_energy_gradients_match_fd(model, rng):
    for _ in range(10):
        q, v = random_state(model, rng)
        s = model.state(q, v)
        E_q, E_v = energy_gradients(model, s)
        fq = fd_grad(lambda qq: energy_qv(model, qq, v), s.q)
        fv = fd_grad(lambda vv: energy_qv(model, s.q, vv), v)
        np.testing.assert_allclose(E_q, fq, atol=1e-6)
        np.testing.assert_allclose(E_v, fv, atol=1e-6)


# -- Legendre duality ---------------------------------------------------------

def test_legendre_kinetic(kinetic):
    v, H = legendre(kinetic, (0, 0), (1, 0))
    np.testing.assert_allclose(v, [1, 0], atol=1e-12)
    assert H == pytest.approx(0.5, abs=1e-12)


def test_legendre_counterexample_linear_region(cx_model, cx_params):
    p = np.array([0.3, -0.2])
    v, H = legendre(cx_model, (0.1, 0.2), p)
    np.testing.assert_allclose(v, p / np.array([cx_params.r1, cx_params.r2]),
                               atol=1e-10)


@pytest.mark.parametrize("model", ALL_MODELS, indirect=True)
def test_legendre_roundtrip(model, rng):
    for _ in range(10):
        q, v = random_state(model, rng)
        p = model.L_v(q, v)
        v_back, H = legendre(model, q, p)
        np.testing.assert_allclose(v_back, v, atol=1e-9)
        # E composed with the inverse Legendre map reproduces H
        assert energy_qv(model, q, v_back) == pytest.approx(H, abs=1e-9)
        closed = model.hamiltonian(q, p)
        if closed is not None:
            assert closed == pytest.approx(H, abs=1e-9)


# -- Tonelli invariants -------------------------------------------------------

@pytest.mark.parametrize("model", ALL_MODELS, indirect=True)
def test_fiber_hessian_positive(model, rng):
    for _ in range(1000):
        q, v = random_state(model, rng, v_scale=2.0)
        L_vv = model.L_vv(q, v)
        np.testing.assert_allclose(L_vv, L_vv.T, atol=1e-12)
        assert np.linalg.eigvalsh(L_vv).min() > 0


@pytest.mark.parametrize("model", ALL_MODELS, indirect=True)
def test_superlinearity_sampled(model, rng):
    q, v = random_state(model, rng)
    v = v / np.linalg.norm(v)
    lams = np.array([1.0, 4.0, 16.0, 64.0, 256.0])
    ratios = np.array([model.L(q, lam * v) / lam for lam in lams])
    assert np.all(np.diff(ratios) > 0)
    assert ratios[-1] > 50.0


@pytest.mark.parametrize("model", ALL_MODELS, indirect=True)
def test_derivatives_match_fd(model, rng):
    """All six analytic evaluators against central differences."""
    for _ in range(20):
        q, v = random_state(model, rng)
        L_q = model.L_q(q, v)
        L_v = model.L_v(q, v)
        scale = max(1.0, np.abs(L_q).max(), np.abs(L_v).max())
        np.testing.assert_allclose(L_q, fd_grad(lambda x: model.L(x, v), q),
                                   atol=1e-5 * scale)
        np.testing.assert_allclose(L_v, fd_grad(lambda x: model.L(q, x), v),
                                   atol=1e-5 * scale)
        for i in range(2):
            np.testing.assert_allclose(
                model.L_vv(q, v)[:, i],
                fd_grad(lambda x: model.L_v(q, x)[i], v), atol=1e-5 * scale)
            np.testing.assert_allclose(
                model.L_qq(q, v)[:, i],
                fd_grad(lambda x: model.L_q(x, v)[i], q), atol=1e-5 * scale)
            np.testing.assert_allclose(
                model.L_qv(q, v)[:, i],
                fd_grad(lambda x: model.L_v(x, v)[i], q), atol=1e-5 * scale)


# -- quadratic-at-infinity clamp ---------------------------------------------

def test_clamp_kinetic_identity(kinetic):
    assert clamp_quadratic_at_infinity(kinetic, 1.0) is kinetic


def test_clamp_two_regimes(mechanical, rng):
    clamped = clamp_quadratic_at_infinity(mechanical, 1.0)
    R = clamped.r_clamp
    for _ in range(40):
        q = rng.random(2) * mechanical.torus.sides
        u = rng.standard_normal(2)
        u /= np.linalg.norm(u)
        v_in = 0.49 * R * rng.random() * u
        assert clamped.L(q, v_in) == pytest.approx(mechanical.L(q, v_in), abs=1e-12)
        v_out = (1.0 + 2.0 * rng.random()) * R * u
        assert clamped.L(q, v_out) == pytest.approx(0.5 * v_out @ v_out, abs=1e-12)


def test_clamp_energy_grows(mechanical):
    clamped = clamp_quadratic_at_infinity(mechanical, 1.0)
    q = np.array([0.3, 0.4])
    vals = [energy_qv(clamped, q, np.array([s, 0.0])) for s in (5, 20, 80)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 1000


def test_clamp_stays_tonelli_and_smooth(mechanical, rng):
    clamped = clamp_quadratic_at_infinity(mechanical, 1.0)
    R = clamped.r_clamp
    for _ in range(200):
        q = rng.random(2) * mechanical.torus.sides
        v = rng.standard_normal(2) * R  # samples straddle the blend zone
        L_vv = clamped.L_vv(q, v)
        np.testing.assert_allclose(L_vv, L_vv.T, atol=1e-12)
        assert np.linalg.eigvalsh(L_vv).min() > 0
    for _ in range(25):
        q = rng.random(2) * mechanical.torus.sides
        v = rng.standard_normal(2) * 0.7 * R
        scale = max(1.0, np.abs(clamped.L_v(q, v)).max())
        np.testing.assert_allclose(
            clamped.L_q(q, v), fd_grad(lambda x: clamped.L(x, v), q),
            atol=1e-5 * scale)
        np.testing.assert_allclose(
            clamped.L_v(q, v), fd_grad(lambda x: clamped.L(q, x), v),
            atol=1e-5 * scale)
        for i in range(2):
            np.testing.assert_allclose(
                clamped.L_vv(q, v)[:, i],
                fd_grad(lambda x: clamped.L_v(q, x)[i], v), atol=1e-4 * scale)
            np.testing.assert_allclose(
                clamped.L_qv(q, v)[:, i],
                fd_grad(lambda x: clamped.L_v(x, v)[i], q), atol=1e-4 * scale)
            np.testing.assert_allclose(
                clamped.L_qq(q, v)[:, i],
                fd_grad(lambda x: clamped.L_q(x, v)[i], q), atol=1e-4 * scale)


def test_registry_rejects_unknown_keys():
    from brokenorbits import build_model

    with pytest.raises(KeyError):
        build_model("kinetic", {"bogus": 1})
    with pytest.raises(KeyError):
        build_model("nonexistent-model", {})
