import numpy as np
import pytest

import parshoot as ps
from parshoot.errors import LegendreViolation

from conftest import make_zero_extremal


def test_closed_form_point(ds):
    u, v, iters, resid = ps.eliminate_controls(
        ds, np.array([0.2, -0.1, 0.0]), np.array([0.6, 0.3, 1.0])
    )
    assert u[0] == pytest.approx(-0.3, abs=1e-12)
    assert v[0] == pytest.approx(0.2, abs=1e-12)
    assert resid <= 1e-12


def test_zero_solution_at_origin(ds):
    u, v, iters, resid = ps.eliminate_controls(ds, np.zeros(3), np.array([0.0, 0, 1.0]))
    np.testing.assert_array_equal(u, 0.0)
    np.testing.assert_array_equal(v, 0.0)


def test_closed_form_random_points(ds):
    # the stationarity system solves to u = -p1/2, v = x1 for any (x, p)
    # with unit third costate
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.standard_normal(3)
        p = np.array([*rng.standard_normal(2), 1.0])
        u, v, _, _ = ps.eliminate_controls(ds, x, p)
        assert u[0] == pytest.approx(-p[0] / 2, abs=1e-9)
        assert v[0] == pytest.approx(x[0], abs=1e-9)


def test_residual_reevaluates_below_tolerance(ds):
    from parshoot.hamiltonian import dynamics_jacobians, field_tensors, hv_ddot

    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal(3)
        p = np.array([*rng.standard_normal(2), 1.0])
        u, v, _, _ = ps.eliminate_controls(ds, x, p)
        t = field_tensors(ds, x, u)
        _, fu, _ = dynamics_jacobians(t, v)
        hu = p @ fu
        hvdd = hv_ddot(ds, x, u, v, p, tensors=t)
        assert max(np.abs(hu).max(), np.abs(hvdd).max()) <= 1e-12


def test_warm_start_converges_immediately(ds):
    x = np.array([0.4, -0.7, 0.2])
    p = np.array([-0.3, 0.9, 1.0])
    u, v, _, _ = ps.eliminate_controls(ds, x, p)
    _, _, iters, _ = ps.eliminate_controls(ds, x, p, warm=(u, v))
    assert iters <= 2


def test_output_continuous_in_inputs(ds):
    # the eliminated controls are smooth functions of (x, p); nearby inputs
    # give nearby outputs with a modest Lipschitz constant
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.standard_normal(3)
        p = np.array([*rng.standard_normal(2), 1.0])
        dx = 1e-3 * rng.standard_normal(3)
        dp = np.array([*(1e-3 * rng.standard_normal(2)), 0.0])
        u1, v1, _, _ = ps.eliminate_controls(ds, x, p)
        u2, v2, _, _ = ps.eliminate_controls(ds, x + dx, p + dp)
        dist_in = np.linalg.norm(np.concatenate([dx, dp]))
        dist_out = np.linalg.norm(np.concatenate([u2 - u1, v2 - v1]))
        assert dist_out <= 2.0 * dist_in


def test_two_affine_problem_solves(two_affine):
    from parshoot.hamiltonian import dynamics_jacobians, field_tensors, hv_ddot

    x = np.array([0.3, -0.2, 0.5])
    p = np.array([0.1, -0.4, 1.0])
    u, v, iters, resid = ps.eliminate_controls(two_affine, x, p)
    assert resid <= 1e-12
    t = field_tensors(two_affine, x, u)
    _, fu, _ = dynamics_jacobians(t, v)
    assert np.abs(p @ fu).max() <= 1e-12
    assert np.abs(hv_ddot(two_affine, x, u, v, p, tensors=t)).max() <= 1e-12


def test_legendre_margins_on_zero_extremal(ds):
    report = ps.check_legendre(ds, make_zero_extremal(50))
    assert report.huu_margin == pytest.approx(2.0, abs=1e-12)
    assert report.generalized_margin == pytest.approx(2.0, abs=1e-12)
    assert report.satisfied


def test_legendre_violated_by_degenerate_problem():
    # dynamics that never see u and a cost with no curvature: H_uu vanishes
    f0 = ps.VectorField(
        value=lambda x, u: np.array([x[1], 0.0]),
        dx=lambda x, u: np.array([[0.0, 1], [0, 0]]),
        du=lambda x, u: np.zeros((2, 1)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 1)),
        duu=lambda x, u: np.zeros((2, 1, 1)),
    )
    f1 = ps.VectorField(
        value=lambda x, u: np.array([0.0, 1.0]),
        dx=lambda x, u: np.zeros((2, 2)),
        du=lambda x, u: np.zeros((2, 1)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 1)),
        duu=lambda x, u: np.zeros((2, 1, 1)),
    )
    cost = ps.EndpointCost(
        value=lambda x0, xT: xT[0],
        grad=lambda x0, xT: np.array([0.0, 0, 1, 0]),
        hess=lambda x0, xT: np.zeros((4, 4)),
    )
    prob = ps.ProblemDef(name="no-curvature", n=2, l=1, m=1, d_eta=0, horizon=1.0,
                         fields=(f0, f1), cost=cost,
                         constraints=ps.EndpointConstraints.empty(2))
    times = np.linspace(0, 1, 11)
    traj = ps.TrajectoryGrid(times=times, x=np.zeros((11, 2)),
                             p=np.tile([1.0, 0.0], (11, 1)),
                             u=np.zeros((11, 1)), v=np.zeros((11, 1)))
    report = ps.check_legendre(prob, traj)
    assert not report.satisfied
    assert report.huu_margin == pytest.approx(0.0, abs=1e-12)


def test_legendre_sign_flips_with_costate(ds):
    report = ps.check_legendre(ds, make_zero_extremal(20, p3=-1.0))
    assert report.huu_margin == pytest.approx(-2.0, abs=1e-12)
    assert report.generalized_margin == pytest.approx(-2.0, abs=1e-12)
    assert not report.satisfied


def test_eliminate_raises_on_singular_system(ds):
    # third costate zero kills the curvature of H in u
    with pytest.raises(LegendreViolation):
        ps.eliminate_controls(ds, np.zeros(3), np.zeros(3))
