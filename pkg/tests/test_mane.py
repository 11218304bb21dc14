import numpy as np
import pytest

from brokenorbits import mane
from brokenorbits.mane import (c_lower_bound, c_upper_bound, e0, mane_estimate,
                               verify_c_lower, verify_c_upper)
from brokenorbits.models import MechanicalModel, FourierSeries2D


def test_e0_kinetic(kinetic):
    assert e0(kinetic) == pytest.approx(0.0, abs=1e-12)


def test_e0_counterexample(cx_model, cx_params):
    p = cx_params
    expect = 0.5 * (p.R / p.r1 + p.R / p.r2)
    assert e0(cx_model) == pytest.approx(expect, abs=1e-8)


def test_e0_mechanical(twopi_torus):
    # both terms peak at the origin, so max V = 0.4 + 0.25 analytically
    V = FourierSeries2D(twopi_torus, [(1, 0, 0.4, 0.0), (1, 1, 0.25, 0.0)])
    model = MechanicalModel(twopi_torus, V)
    assert e0(model) == pytest.approx(0.65, abs=1e-8)


def test_e0_ignores_velocity_odd_terms(magnetic_strip):
    # pure magnetic term: rest energy is identically zero
    assert e0(magnetic_strip) == pytest.approx(0.0, abs=1e-8)


def test_c_upper_kinetic(kinetic):
    val, cert = c_upper_bound(kinetic, family_size=1, grid_coarse=12,
                              grid_fine=32)
    assert 0.0 <= val <= 1e-6
    assert verify_c_upper(kinetic, cert)


def test_c_upper_mechanical_hits_max_v(twopi_torus):
    V = FourierSeries2D(twopi_torus, [(1, 0, 0.3, 0.0)])
    model = MechanicalModel(twopi_torus, V)
    val, cert = c_upper_bound(model, family_size=1, grid_coarse=16,
                              grid_fine=64)
    assert val >= 0.3 - 1e-9          # never below the true critical value
    assert val <= 0.3 + 0.05          # and essentially attains it
    assert verify_c_upper(model, cert)


def test_c_upper_monotone_in_family(magnetic_strip):
    v1, _ = c_upper_bound(magnetic_strip, family_size=1, grid_coarse=12,
                          grid_fine=48, maxiter=120)
    v2, _ = c_upper_bound(magnetic_strip, family_size=2, grid_coarse=12,
                          grid_fine=48, maxiter=120)
    assert np.isfinite(v1) and np.isfinite(v2)
    assert v1 >= 0.0 and v2 >= 0.0    # e0 = 0 lower bound
    assert v2 <= v1 + 1e-9


def test_c_lower_kinetic_has_no_certificate(kinetic):
    val, cert = c_lower_bound(kinetic, [0.1, 0.3, 0.5])
    assert val == pytest.approx(0.0, abs=1e-12)
    assert cert is None


def test_c_lower_magnetic_certified(magnetic_strip):
    val, cert = c_lower_bound(magnetic_strip, np.linspace(0.05, 0.5, 6))
    assert val > 0.0
    assert cert is not None
    assert cert.action < 0
    assert verify_c_lower(magnetic_strip, cert)


def test_certificate_reverification_is_self_contained(magnetic_strip):
    _, cert = c_lower_bound(magnetic_strip, [0.2])
    # verification uses only the model and the stored loop
    assert verify_c_lower(magnetic_strip, cert)
    broken = mane.LoopCertificate(k=cert.k, points=cert.points, tau=cert.tau,
                                  action=cert.action + 1.0)
    assert not verify_c_lower(magnetic_strip, broken)


@pytest.mark.parametrize("model_name", ["kinetic", "mechanical", "magnetic_strip"])
def test_sandwich(model_name, request):
    model = request.getfixturevalue(model_name)
    est = mane_estimate(model, family_size=1, h=16)
    assert est.e0 <= est.c_upper + 1e-9
    assert est.c_lower <= est.c_upper + 1e-6
    assert est.c_lower >= est.e0 - 1e-12
    as_json = est.as_dict()
    assert as_json["type"] == "mane"
