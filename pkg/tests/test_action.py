import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brokenorbits import (DiscreteLoop, LoopEvaluator, discrete_action,
                          discrete_gradient, discrete_hessian, index_nullity,
                          iterate, nullity_partition, nullity_via_monodromy)
from brokenorbits.action import perturb_loop, resample_loop
from brokenorbits.errors import NotCritical
from brokenorbits.flow import Propagator


def winding_geodesic_loop(h, k, doublings=1.0):
    """Equally spaced points winding once in direction (1,0) on the unit torus."""
    v = np.sqrt(2 * k)
    tau = doublings * 1.0 / (h * v)
    pts = np.column_stack([np.arange(h) / h, np.zeros(h)])
    return DiscreteLoop(points=pts, tau=tau)


def random_loop(model, rng, h=6, spread=0.25, tau=None):
    base = rng.random(2) * model.torus.sides
    steps = spread * rng.standard_normal((h, 2))
    pts = model.torus.wrap(base + np.cumsum(steps, axis=0))
    tau = tau if tau is not None else 0.05 + 0.1 * rng.random()
    return DiscreteLoop(points=pts, tau=tau)


# -- action values -------------------------------------------------------------

def test_winding_action_closed_form(kinetic):
    loop = winding_geodesic_loop(3, 0.5)
    # 3 straight segments of length 1/3 in time 1/3 plus h tau k
    assert discrete_action(kinetic, 0.5, loop) == pytest.approx(1.0, abs=1e-12)


def test_constant_loop_limit(kinetic):
    q = np.array([0.4, 0.7])
    k = 0.5
    vals = []
    for tau in (1e-2, 1e-3, 1e-4):
        loop = DiscreteLoop(points=np.tile(q, (4, 1)), tau=tau)
        val = discrete_action(kinetic, k, loop)
        # constant-segment limit: h tau (k + L(q, 0)) with L(q,0) = 0
        assert val == pytest.approx(4 * tau * k, abs=1e-12)
        vals.append(val)
    assert vals[0] > vals[1] > vals[2] > 0


def test_magnetic_circle_negative_action(magnetic_strip):
    from brokenorbits.search import circle_seed_family

    k = 0.1
    seeds = circle_seed_family(magnetic_strip, k)
    loop = seeds[0].loop(magnetic_strip.torus, 32)
    assert discrete_action(magnetic_strip, k, loop) < 0


# -- gradient -------------------------------------------------------------------

def test_gradient_vanishes_on_matched_geodesic(kinetic):
    k = 0.5
    loop = winding_geodesic_loop(8, k)
    g = discrete_gradient(kinetic, k, loop)
    assert g.norm() < 1e-12


def test_gradient_mu_at_double_period(kinetic):
    k = 0.5
    loop = winding_geodesic_loop(8, k, doublings=2.0)
    g = discrete_gradient(kinetic, k, loop)
    assert np.abs(g.w).max() < 1e-12
    assert g.mu == pytest.approx(0.375, abs=1e-12)  # k - k/4


@pytest.mark.parametrize("model_name", ["mechanical", "magnetic_strip", "cx_model"])
def test_gradient_matches_fd(model_name, request, rng):
    model = request.getfixturevalue(model_name)
    k = 0.3
    for _ in range(5):
        loop = random_loop(model, rng)
        ev = LoopEvaluator(model, k, rtol=1e-12, atol=1e-12, shoot_tol=1e-13)
        gv = ev.gradient(loop).as_coordinates()
        eps = 2e-5
        for _ in range(4):
            u = rng.standard_normal(gv.shape)
            u /= np.linalg.norm(u)
            lp = DiscreteLoop(points=loop.points + eps * u[:-1].reshape(-1, 2),
                              tau=loop.tau + eps * u[-1])
            lm = DiscreteLoop(points=loop.points - eps * u[:-1].reshape(-1, 2),
                              tau=loop.tau - eps * u[-1])
            fd = (ev.action(lp) - ev.action(lm)) / (2 * eps)
            assert abs(fd - gv @ u) <= 1e-6 * max(1.0, np.linalg.norm(gv))


# -- Hessian ---------------------------------------------------------------------

def test_hessian_flat_geodesic_indices(kinetic):
    k = 0.5
    loop = winding_geodesic_loop(12, k)
    rep = discrete_hessian(kinetic, k, loop)
    assert rep.ind_h == 0
    assert rep.nul_h == 2
    assert rep.asymmetry < 1e-9


def test_hessian_requires_criticality(kinetic, rng):
    loop = random_loop(kinetic, rng)
    with pytest.raises(NotCritical):
        discrete_hessian(kinetic, 0.5, loop)


@pytest.mark.parametrize("model_name", ["kinetic", "cx_model"])
def test_hessian_matches_fd_of_gradient(model_name, request, rng):
    model = request.getfixturevalue(model_name)
    if model_name == "kinetic":
        k, loop = 0.5, winding_geodesic_loop(8, 0.5)
    else:
        from brokenorbits import CounterexampleParams, reference_orbits

        k = 0.25
        orbit = reference_orbits(CounterexampleParams(), k)[0]
        loop, _ = orbit.loop(model, 16)
    ev = LoopEvaluator(model, k, rtol=1e-12, atol=1e-12, shoot_tol=1e-13)
    rep = discrete_hessian(model, k, loop, tol_crit=1e-5, evaluator=ev)
    n = 2 * loop.h + 1
    eps = 1e-5
    fd = np.zeros((n, n))
    for j in range(n):
        u = np.zeros(n)
        u[j] = eps
        lp = DiscreteLoop(points=loop.points + u[:-1].reshape(-1, 2),
                          tau=loop.tau + u[-1])
        lm = DiscreteLoop(points=loop.points - u[:-1].reshape(-1, 2),
                          tau=loop.tau - u[-1])
        fd[:, j] = (ev.gradient(lp).as_coordinates()
                    - ev.gradient(lm).as_coordinates()) / (2 * eps)
    np.testing.assert_allclose(rep.hessian_full, 0.5 * (fd + fd.T), atol=1e-4)


def test_critical_circle_invariance(cx_model, cx_params):
    """Indices computed at time-shifted samplings of one orbit all agree."""
    from brokenorbits import reference_orbits

    k = 0.25
    orbit = reference_orbits(cx_params, k)[0]
    results = set()
    for j in range(8):
        loop, _ = orbit.loop(cx_model, 24, shift=j * orbit.period / (8 * 24))
        rep = discrete_hessian(cx_model, k, loop, tol_crit=1e-6)
        results.add((rep.ind_H, rep.nul_H, rep.ind_h, rep.nul_h))
    assert len(results) == 1


# -- index / nullity -------------------------------------------------------------

def test_index_nullity_identity():
    assert index_nullity(np.eye(3)) == (0, 0)


def test_index_nullity_mixed():
    assert index_nullity(np.diag([-1.0, 0.0, 3.0])) == (1, 1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-5, 5)))
def test_index_nullity_completeness(a):
    sym = 0.5 * (a + a.T)
    ind, nul = index_nullity(sym)
    eigs = np.linalg.eigvalsh(sym)
    tol = 1e-6 * max(np.abs(eigs).max(), 1e-12)
    pos = int(np.sum(eigs > tol))
    assert ind + nul + pos == 5


# -- iterates ---------------------------------------------------------------------

def test_iterate_identity(kinetic):
    loop = winding_geodesic_loop(5, 0.5)
    it1 = iterate(loop, 1)
    np.testing.assert_array_equal(it1.points, loop.points)
    assert it1.tau == loop.tau


def test_iterate_action_additivity(magnetic_strip, rng):
    k = 0.3
    loop = random_loop(magnetic_strip, rng, h=5)
    S1 = discrete_action(magnetic_strip, k, loop)
    S2 = discrete_action(magnetic_strip, k, iterate(loop, 2))
    assert S2 == pytest.approx(2 * S1, rel=1e-12)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_iterate_gradient_equivariance(magnetic_strip, rng, m):
    k = 0.3
    loop = random_loop(magnetic_strip, rng, h=4)
    ev = LoopEvaluator(magnetic_strip, k)
    g1 = ev.gradient(loop)
    gm = ev.gradient(iterate(loop, m))
    np.testing.assert_allclose(gm.w, np.tile(g1.w, (m, 1)), atol=1e-10)
    assert gm.mu == pytest.approx(g1.mu, abs=1e-10)


# -- monodromy spectral identities -------------------------------------------------

def test_nullity_shear_monodromy():
    shear = np.block([[np.eye(2), 0.7 * np.eye(2)],
                      [np.zeros((2, 2)), np.eye(2)]])
    P = Propagator(t=1.0, matrix=shear)
    for m in (1, 2, 3, 8):
        assert nullity_via_monodromy(P, m) == 2
    parts = nullity_partition(P, 8)
    assert len(parts) == 1
    assert parts[0][1] == 2
    assert parts[0][2] == list(range(1, 9))


def test_nullity_counterexample_monodromy(cx_params):
    from brokenorbits.fixtures import monodromy_eigenvalues

    eigs = monodromy_eigenvalues(cx_params, 0)
    # irrational rotation: only the double eigenvalue 1 contributes, any m
    P = Propagator(t=1.0, matrix=np.diag(eigs))
    for m in (1, 2, 5, 8):
        assert nullity_via_monodromy(P, m) == 2
    parts = nullity_partition(P, 8)
    assert len(parts) == 1 and parts[0][1] == 2


def test_nullity_partition_fourth_root():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # eigenvalues +-i
    P = Propagator(t=1.0, matrix=np.block(
        [[rot, np.zeros((2, 2))], [np.zeros((2, 2)), np.eye(2)]]))
    parts = nullity_partition(P, 8)
    classes = {tuple(members): nu for _, nu, members in parts}
    assert classes[(4, 8)] == 4       # i, -i join the double 1
    assert classes[(1, 2, 3, 5, 6, 7)] == 2


def test_monodromy_nullity_matches_hessian_on_iterates(cx_model, cx_params):
    """Integer agreement nul(h_m) == sum over m-th roots of kernel dims."""
    from brokenorbits import reference_orbits

    k = 0.25
    orbit = reference_orbits(cx_params, k)[0]
    loop, _ = orbit.loop(cx_model, 20)
    ev = LoopEvaluator(cx_model, k)
    rep1 = discrete_hessian(cx_model, k, loop, tol_crit=1e-6, evaluator=ev)
    for m in (1, 2, 3):
        rep_m = discrete_hessian(cx_model, k, iterate(loop, m),
                                 tol_crit=1e-6, evaluator=ev)
        assert rep_m.nul_h == nullity_via_monodromy(rep1.monodromy, m)


# -- kernel reconstruction (full Hessian kernel as continuous fields) ---------------

def test_kernel_vectors_reconstruct_to_fields(cx_model, cx_params):
    from brokenorbits import reference_orbits
    from brokenorbits.action import reconstruct_kernel_field

    from test_shoot import _jacobi_residual, rescaling_inhomogeneity

    k = 0.25
    orbit = reference_orbits(cx_params, k)[0]
    loop, _ = orbit.loop(cx_model, 24)
    rep = discrete_hessian(cx_model, k, loop, tol_crit=1e-6)
    H = rep.hessian_full
    eigvals, eigvecs = np.linalg.eigh(H)
    kernel_idx = np.where(np.abs(eigvals) <= rep.tol_rank_H)[0]
    assert len(kernel_idx) == rep.nul_H >= 1
    ev = LoopEvaluator(cx_model, k)
    segs = ev.segments(loop)
    total_kinetic = sum(
        seg.tau * 0 + np.trapezoid(
            [cx_model.L_vv(s[0:2], s[2:4]) @ s[2:4] @ s[2:4]
             for s in seg.sample(64)[1]], dx=seg.tau / 64)
        for seg in segs)
    for idx in kernel_idx:
        vec = eigvecs[:, idx]
        v_part, sigma = vec[:-1], vec[-1]
        fields, segs = reconstruct_kernel_field(cx_model, k, loop, v_part,
                                                sigma, n=256)
        sigma_lhs = sigma * total_kinetic
        sigma_rhs = 0.0
        for field, seg in zip(fields, segs):
            inhom = sigma * rescaling_inhomogeneity(cx_model, field, loop.tau)
            assert _jacobi_residual(cx_model, field, inhom) < 1e-5
            # accumulate tau * integral of dE[(xi, xi_dot)]
            n = len(field.ts)
            dE = np.empty(n)
            for i in range(n):
                q, v = field.states[i, 0:2], field.states[i, 2:4]
                E_q = cx_model.L_qv(q, v) @ v - cx_model.L_q(q, v)
                E_v = cx_model.L_vv(q, v) @ v
                dE[i] = E_q @ field.theta[i] + E_v @ field.theta_dot[i]
            sigma_rhs += np.trapezoid(dE, dx=loop.tau / (n - 1))
        sigma_rhs *= loop.tau
        assert abs(sigma_lhs - sigma_rhs) <= 1e-5 * (1 + abs(sigma_lhs))


def test_jacobian_with_velocity_dependent_mixed_derivatives(twopi_torus):
    """Clamped models have v-dependent mixed derivatives, so the junction
    terms of the gradient Jacobian are exercised for real; FD is the oracle.
    """
    from brokenorbits.models import (MechanicalModel, FourierSeries2D,
                                     clamp_quadratic_at_infinity)

    mech = MechanicalModel(twopi_torus, FourierSeries2D(twopi_torus,
                                                        [(1, 0, 0.3, 0.0)]))
    clamped = clamp_quadratic_at_infinity(mech, 1.0)
    rng = np.random.default_rng(9)
    h = 4
    gap = 0.8
    tau = gap / (0.8 * clamped.r_clamp)  # speeds land inside the blend zone
    steps = gap * np.array([[1, 0], [0, 1], [-1, 0], [0, -1.0]])
    pts = twopi_torus.wrap(np.array([0.3, 0.4]) + np.cumsum(steps, axis=0)
                           + 0.05 * rng.standard_normal((h, 2)))
    loop = DiscreteLoop(points=pts, tau=tau)
    ev = LoopEvaluator(clamped, 1.0, rtol=1e-11, atol=1e-11, shoot_tol=1e-12)
    segs = ev.segments(loop)
    speeds = [np.linalg.norm(s.nu_minus) for s in segs]
    assert all(clamped.r_clamp / 2 < s < clamped.r_clamp for s in speeds)
    J = ev.jacobian(loop)
    n = 2 * h + 1
    eps = 1e-6
    fd = np.zeros((n, n))
    for j in range(n):
        u = np.zeros(n)
        u[j] = eps
        lp = DiscreteLoop(points=loop.points + u[:-1].reshape(-1, 2),
                          tau=loop.tau + u[-1])
        lm = DiscreteLoop(points=loop.points - u[:-1].reshape(-1, 2),
                          tau=loop.tau - u[-1])
        fd[:, j] = (ev.gradient(lp).as_coordinates()
                    - ev.gradient(lm).as_coordinates()) / (2 * eps)
    assert np.abs(J - fd).max() < 1e-6


# -- resampling --------------------------------------------------------------------

def test_resample_critical_loop_stays_critical(cx_model, cx_params):
    from brokenorbits import reference_orbits

    k = 0.25
    orbit = reference_orbits(cx_params, k)[0]
    loop, _ = orbit.loop(cx_model, 24)
    res = resample_loop(cx_model, k, loop, 36)
    assert res.h == 36
    assert res.period == pytest.approx(loop.period, rel=1e-12)
    g = discrete_gradient(cx_model, k, res)
    assert g.norm() < 1e-7


def test_perturb_and_winding(kinetic, rng):
    loop = winding_geodesic_loop(8, 0.5)
    assert loop.winding(kinetic.torus) == (1, 0)
    pert = perturb_loop(loop, rng, amp_q=0.01)
    assert pert.winding(kinetic.torus) == (1, 0)
