import numpy as np
import pytest

from brokenorbits import integrate, linearized_flow, monodromy, reference_orbits
from brokenorbits.errors import NotCritical
from brokenorbits.flow import flow_state
from brokenorbits.models import MechanicalModel, FourierSeries2D

from conftest import random_state


def test_kinetic_straight_line(kinetic):
    s0 = kinetic.state((0, 0), (1, 0))
    traj = integrate(kinetic, s0, 0.5)
    np.testing.assert_allclose(traj.final.q, [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(traj.final.v, [1.0, 0.0], atol=1e-12)
    assert traj.energy_drift < 1e-14


def test_kinetic_wraps(kinetic):
    s0 = kinetic.state((0.8, 0), (1, 0))
    traj = integrate(kinetic, s0, 0.5)
    np.testing.assert_allclose(traj.final.q, [0.3, 0.0], atol=1e-10)


def test_counterexample_orbit_closes(cx_model, cx_params):
    orbit, _ = reference_orbits(cx_params, 0.25)[0], None
    s0 = orbit.tangent_state(0.0, cx_model)
    traj = integrate(cx_model, s0, orbit.period, n_samples=64)
    d = cx_model.torus.delta(traj.final.q, s0.q)
    assert np.hypot(d[0], d[1]) < 1e-8
    np.testing.assert_allclose(traj.final.v, s0.v, atol=1e-8)


def test_energy_conservation_long_run(twopi_torus):
    V = FourierSeries2D(twopi_torus, [(1, 0, 0.5, 0.0)])  # pendulum-type
    model = MechanicalModel(twopi_torus, V)
    s0 = model.state((0.3, 0.1), (0.9, 0.4))
    traj = integrate(model, s0, 10.0, n_samples=200)
    E0 = traj.energy[0]
    assert traj.energy_drift <= 1e-8 * max(1.0, abs(E0)) * 10.0


def test_linearized_kinetic_is_shear(kinetic, rng):
    for _ in range(3):
        q, v = random_state(kinetic, rng)
        s0 = kinetic.state(q, v)
        t = 0.7
        P = linearized_flow(kinetic, s0, t)
        expect = np.block([[np.eye(2), t * np.eye(2)],
                           [np.zeros((2, 2)), np.eye(2)]])
        np.testing.assert_allclose(P.matrix, expect, atol=1e-9)


def test_linearized_zero_time_identity(mechanical):
    s0 = mechanical.state((0.2, 0.4), (0.5, -0.1))
    P = linearized_flow(mechanical, s0, 0.0)
    np.testing.assert_allclose(P.matrix, np.eye(4), atol=1e-15)


def test_counterexample_monodromy_eigenvalues(cx_model, cx_params):
    from brokenorbits.fixtures import monodromy_eigenvalues

    orbit = reference_orbits(cx_params, 0.25)[0]
    s0 = orbit.tangent_state(0.0, cx_model)
    P = linearized_flow(cx_model, s0, orbit.period)
    got = np.sort_complex(P.eigenvalues())
    expect = np.sort_complex(monodromy_eigenvalues(cx_params, 0))
    np.testing.assert_allclose(got, expect, atol=1e-6)
    assert abs(P.determinant - 1.0) < 1e-6


def test_semigroup_property(mechanical, rng):
    q, v = random_state(mechanical, rng)
    s0 = mechanical.state(q, v)
    t1, t2 = 0.8, 1.3
    mid = flow_state(mechanical, s0, t1)
    end_a = flow_state(mechanical, mid, t2)
    end_b = flow_state(mechanical, s0, t1 + t2)
    d = mechanical.torus.delta(end_a.q, end_b.q)
    assert np.hypot(d[0], d[1]) < 1e-8
    np.testing.assert_allclose(end_a.v, end_b.v, atol=1e-8)


def test_propagator_cocycle(magnetic_strip, rng):
    q, v = random_state(magnetic_strip, rng)
    s0 = magnetic_strip.state(q, v)
    t1, t2 = 0.6, 0.9
    P1 = linearized_flow(magnetic_strip, s0, t1)
    mid = flow_state(magnetic_strip, s0, t1)
    P2 = linearized_flow(magnetic_strip, mid, t2)
    P12 = linearized_flow(magnetic_strip, s0, t1 + t2)
    np.testing.assert_allclose(P2.matrix @ P1.matrix, P12.matrix, atol=1e-6)


@pytest.mark.parametrize("model_name", ["mechanical", "magnetic_strip", "cx_model"])
def test_propagator_matches_finite_differences(model_name, request, rng):
    model = request.getfixturevalue(model_name)
    q, v = random_state(model, rng)
    z0 = np.concatenate([model.torus.wrap(q), v])
    t = 1.1
    P = linearized_flow(model, model.state(q, v), t)
    from brokenorbits import kernels

    eps = 1e-6
    fd = np.zeros((4, 4))
    for j in range(4):
        zp, zm = z0.copy(), z0.copy()
        zp[j] += eps
        zm[j] -= eps
        rp = kernels.propagate(model, zp, t, rtol=1e-12, atol=1e-12)
        rm = kernels.propagate(model, zm, t, rtol=1e-12, atol=1e-12)
        fd[:, j] = (rp.zf - rm.zf) / (2 * eps)
    np.testing.assert_allclose(P.matrix, fd, atol=1e-4)


def test_monodromy_requires_critical_loop(kinetic):
    from brokenorbits import DiscreteLoop

    bad = DiscreteLoop(points=np.array([[0.0, 0.0], [0.3, 0.1], [0.6, 0.4]]),
                       tau=0.2)
    with pytest.raises(NotCritical):
        monodromy(kinetic, bad, k=0.5)


def test_monodromy_flat_geodesic(kinetic):
    from brokenorbits import DiscreteLoop

    h, k = 8, 0.5
    v = np.sqrt(2 * k)
    tau = 1.0 / (h * v)
    pts = np.column_stack([np.arange(h) / h, np.zeros(h)])
    loop = DiscreteLoop(points=pts, tau=tau)
    P = monodromy(kinetic, loop, k=k)
    assert abs(P.determinant - 1.0) < 1e-6
    # shear: eigenvalue 1 with geometric multiplicity 2
    s = np.linalg.svd(P.matrix - np.eye(4), compute_uv=False)
    assert np.sum(s < 1e-6 * s[0]) == 2


def test_trajectory_export_columns(kinetic, tmp_path):
    s0 = kinetic.state((0, 0), (1, 0.5))
    traj = integrate(kinetic, s0, 1.0, n_samples=16)
    cols = traj.export_columns()
    assert cols.shape == (17, 5)
    out = tmp_path / "trace.txt"
    traj.save(out)
    data = np.loadtxt(out)
    np.testing.assert_allclose(data, cols, atol=1e-12)
