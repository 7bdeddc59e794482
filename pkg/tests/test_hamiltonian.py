import numpy as np
import pytest

import parshoot as ps
from parshoot.hamiltonian import HamiltonianPoint, field_tensors


def test_h_value_hand_computed(ds):
    pt = HamiltonianPoint.at(ds, [1.0, 2, 0], [3.0], [4.0], [1.0, 1, 1])
    assert ps.h_value(pt) == pytest.approx(103.0, abs=1e-12)


def test_h_value_zero_cases(ds):
    pt = HamiltonianPoint.at(ds, np.zeros(3), np.zeros(1), np.zeros(1), [0, 0, 1.0])
    assert ps.h_value(pt) == 0.0
    pt = HamiltonianPoint.at(ds, [0.7, -0.3, 0.2], [0.5], [0.1], np.zeros(3))
    assert ps.h_value(pt) == 0.0


def test_h_gradients_closed_forms(ds):
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        v = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        pt = HamiltonianPoint.at(ds, x, u, v, p)
        hx, hu, hv = ps.h_gradients(pt)
        assert hu[0] == pytest.approx(p[0] + 2 * u[0], abs=1e-12)
        assert hv[0] == pytest.approx(p[1] + 10 * x[1], abs=1e-12)


def test_h_gradients_vanish_at_origin(ds):
    pt = HamiltonianPoint.at(ds, np.zeros(3), np.zeros(1), np.zeros(1), np.zeros(3))
    for g in ps.h_gradients(pt):
        np.testing.assert_array_equal(g, 0.0)


def test_lie_bracket_closed_form(ds):
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        np.testing.assert_allclose(
            ps.lie_bracket(ds, 0, 1, x, u), [-1.0, 0.0, -2 * x[1]], atol=1e-12
        )


def test_lie_bracket_antisymmetry(two_affine):
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        for i in range(3):
            np.testing.assert_array_equal(ps.lie_bracket(two_affine, i, i, x, u), 0.0)
            for j in range(3):
                np.testing.assert_allclose(
                    ps.lie_bracket(two_affine, i, j, x, u),
                    -ps.lie_bracket(two_affine, j, i, x, u),
                    atol=1e-12,
                )


def test_lie_bracket_fd_oracle(two_affine):
    # (Dx f_j) f_i by directional differences, assembled into the bracket
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(5):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        for i, j in [(0, 1), (1, 2), (0, 2)]:
            fi = two_affine.fields[i].value(x, u)
            fj = two_affine.fields[j].value(x, u)
            dj_fi = (two_affine.fields[j].value(x + h * fi, u)
                     - two_affine.fields[j].value(x - h * fi, u)) / (2 * h)
            di_fj = (two_affine.fields[i].value(x + h * fj, u)
                     - two_affine.fields[i].value(x - h * fj, u)) / (2 * h)
            np.testing.assert_allclose(
                ps.lie_bracket(two_affine, i, j, x, u), dj_fi - di_fj, atol=1e-8
            )


def test_lie_bracket_index_check(ds):
    with pytest.raises(IndexError):
        ps.lie_bracket(ds, 0, 2, np.zeros(3), np.zeros(1))


def test_hv_dot_closed_form(ds):
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        got = ps.hv_dot(ds, x, u, p)
        assert got[0] == pytest.approx(-p[0] - 2 * x[1], abs=1e-12)
    np.testing.assert_array_equal(ps.hv_dot(ds, x, u, np.zeros(3)), 0.0)


def test_hv_dot_ignores_v(ds):
    # the reduced form depends on (x, u, p) only; the affine control does
    # not even appear in the signature, and the value is the pairing of the
    # costate with the drift brackets
    import inspect

    assert "v" not in inspect.signature(ps.hv_dot).parameters
    x = np.array([0.2, -0.4, 1.0])
    u = np.array([0.3])
    p = np.array([0.5, -0.1, 1.0])
    expected = np.array([p @ ps.lie_bracket(ds, 0, 1, x, u)])
    np.testing.assert_allclose(ps.hv_dot(ds, x, u, p), expected, atol=1e-14)


def test_hv_dot_matches_fd_along_extremal(ds):
    traj = ps.propagate(ds, np.zeros(3), np.array([0.6, 0.2, 1.0]), 2000, "rk4")
    h = traj.dt
    from parshoot.hamiltonian import HamiltonianPoint, h_gradients

    hv = np.array([
        h_gradients(HamiltonianPoint.at(ds, traj.x[k], traj.u[k], traj.v[k], traj.p[k]))[2][0]
        for k in range(len(traj.times))
    ])
    for k in (300, 900, 1500):
        fd = (hv[k + 1] - hv[k - 1]) / (2 * h)
        model = ps.hv_dot(ds, traj.x[k], traj.u[k], traj.p[k])[0]
        assert fd == pytest.approx(model, abs=5e-4)


def test_gamma_udot_closed_form(ds):
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        v = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        assert ps.gamma_udot(ds, x, u, v, p)[0] == pytest.approx(x[0], abs=1e-12)


def test_gamma_udot_fd_oracle_along_extremal(ds):
    # the eliminated control is u(t) = -p1(t)/2; its numerical rate must
    # match the feedback expression
    traj = ps.propagate(ds, np.zeros(3), np.array([0.4, -0.3, 1.0]), 4000, "rk4")
    h = traj.dt
    for k in (500, 2000, 3500):
        fd = (traj.u[k + 1, 0] - traj.u[k - 1, 0]) / (2 * h)
        model = ps.gamma_udot(ds, traj.x[k], traj.u[k], traj.v[k], traj.p[k])[0]
        assert fd == pytest.approx(model, abs=1e-5)


def test_gamma_udot_zero_at_homogeneous_point(two_affine):
    # at x = 0 with u = 0 the dynamics and H_x both vanish, so udot = 0
    got = ps.gamma_udot(two_affine, np.zeros(3), np.zeros(1), np.zeros(2),
                        np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(got, 0.0, atol=1e-9)


def test_gamma_udot_empty_without_nonlinear_control():
    f0 = ps.VectorField(
        value=lambda x, u: np.array([x[1], 0.0]),
        dx=lambda x, u: np.array([[0.0, 1], [0, 0]]),
        du=lambda x, u: np.zeros((2, 0)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 0)),
        duu=lambda x, u: np.zeros((2, 0, 0)),
    )
    f1 = ps.VectorField(
        value=lambda x, u: np.array([0.0, 1.0]),
        dx=lambda x, u: np.zeros((2, 2)),
        du=lambda x, u: np.zeros((2, 0)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 0)),
        duu=lambda x, u: np.zeros((2, 0, 0)),
    )
    cost = ps.EndpointCost(
        value=lambda x0, xT: xT[0],
        grad=lambda x0, xT: np.array([0.0, 0, 1, 0]),
        hess=lambda x0, xT: np.zeros((4, 4)),
    )
    prob = ps.ProblemDef(name="affine-only", n=2, l=0, m=1, d_eta=0, horizon=1.0,
                         fields=(f0, f1), cost=cost,
                         constraints=ps.EndpointConstraints.empty(2))
    assert ps.gamma_udot(prob, np.zeros(2), np.zeros(0), np.zeros(1),
                         np.array([1.0, 1.0])).shape == (0,)


def test_gamma_udot_raises_on_singular_huu(ds):
    from parshoot.errors import LegendreViolation

    with pytest.raises(LegendreViolation):
        ps.gamma_udot(ds, np.zeros(3), np.zeros(1), np.zeros(1), np.zeros(3))


def test_hv_ddot_closed_form(ds):
    rng = np.random.default_rng(6)
    for _ in range(100):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        v = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        got = ps.hv_ddot(ds, x, u, v, p)
        assert got[0] == pytest.approx(-2 * v[0] + 2 * x[0], abs=1e-9)
    got = ps.hv_ddot(ds, np.array([0.3, 0, 0]), np.zeros(1), np.array([0.1]),
                     np.array([0.0, 0, 1.0]))
    assert got[0] == pytest.approx(0.4, abs=1e-12)


def test_hv_ddot_affine_in_v(two_affine):
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        v0 = rng.standard_normal(2)
        dv = rng.standard_normal(2)
        at = lambda s: ps.hv_ddot(two_affine, x, u, v0 + s * dv, p)
        lo, mid, hi = at(0.0), at(0.5), at(1.0)
        np.testing.assert_allclose(mid, 0.5 * (lo + hi), atol=1e-8)


def test_hv_ddot_second_difference_bound(ds):
    # along a propagated extremal the elimination drives Hddot_v to zero,
    # so H_v is affine in time there and the second difference of its path
    # must agree with the model value within the O(step^2) budget (both are
    # at roundoff; the bound certifies the agreement without dividing noise)
    from parshoot.hamiltonian import HamiltonianPoint, h_gradients

    for n in (500, 1000):
        traj = ps.propagate(ds, np.zeros(3), np.array([0.5, 0.1, 1.0]), n, "rk4")
        h = traj.dt
        hv = np.array([
            h_gradients(HamiltonianPoint.at(ds, traj.x[k], traj.u[k], traj.v[k],
                                            traj.p[k]))[2][0]
            for k in range(len(traj.times))
        ])
        k = n // 2
        fd2 = (hv[k + 1] - 2 * hv[k] + hv[k - 1]) / h**2
        model = ps.hv_ddot(ds, traj.x[k], traj.u[k], traj.v[k], traj.p[k])[0]
        assert abs(fd2 - model) <= h**1.5
        # the affine-in-time structure itself: first differences are constant
        dhv = np.diff(hv) / h
        assert np.ptp(dhv[1:-1]) <= 50 * h**2 * max(1.0, np.abs(dhv).max())


def test_elimination_jacobian_closed_form(ds):
    rng = np.random.default_rng(8)
    for _ in range(5):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        v = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        np.testing.assert_allclose(
            ps.elimination_jacobian(ds, x, u, v, p), np.diag([2.0, 2.0]), atol=1e-8
        )


def test_elimination_jacobian_matches_fd(two_affine):
    # full finite-difference oracle for the stacked map (H_u, -Hddot_v)
    rng = np.random.default_rng(9)
    x = rng.standard_normal(3)
    u = rng.standard_normal(1)
    v = rng.standard_normal(2)
    p = np.array([0.3, -0.2, 1.0])

    def stacked(uu, vv):
        t = field_tensors(two_affine, x, uu)
        from parshoot.hamiltonian import dynamics_jacobians

        _, fu, _ = dynamics_jacobians(t, vv)
        return np.concatenate([p @ fu, -ps.hv_ddot(two_affine, x, uu, vv, p)])

    jac = ps.elimination_jacobian(two_affine, x, u, v, p)
    h = 1e-5
    fd = np.zeros_like(jac)
    for c in range(3):
        du = np.zeros(1)
        dv = np.zeros(2)
        if c == 0:
            du[0] = h
        else:
            dv[c - 1] = h
        fd[:, c] = (stacked(u + du, v + dv) - stacked(u - du, v - dv)) / (2 * h)
    np.testing.assert_allclose(jac, fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_elimination_jacobian_positive_definite_part(ds):
    # wherever both strengthened conditions hold the symmetric part is
    # positive definite; the builtin problem satisfies them everywhere
    # along costates with positive third component
    rng = np.random.default_rng(12)
    for _ in range(5):
        jac = ps.elimination_jacobian(ds, rng.standard_normal(3),
                                      rng.standard_normal(1),
                                      rng.standard_normal(1),
                                      np.array([*rng.standard_normal(2), 1.0]))
        assert np.linalg.eigvalsh(0.5 * (jac + jac.T))[0] > 0


def test_elimination_jacobian_affine_only_problem():
    # without a nonlinear control the Jacobian reduces to -dHddot_v/dv
    f0 = ps.VectorField(
        value=lambda x, u: np.array([x[1], 0.0]),
        dx=lambda x, u: np.array([[0.0, 1], [0, 0]]),
        du=lambda x, u: np.zeros((2, 0)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 0)),
        duu=lambda x, u: np.zeros((2, 0, 0)),
    )
    f1 = ps.VectorField(
        value=lambda x, u: np.array([0.0, x[0]]),
        dx=lambda x, u: np.array([[0.0, 0], [1, 0]]),
        du=lambda x, u: np.zeros((2, 0)),
        dxx=lambda x, u: np.zeros((2, 2, 2)),
        dxu=lambda x, u: np.zeros((2, 2, 0)),
        duu=lambda x, u: np.zeros((2, 0, 0)),
    )
    cost = ps.EndpointCost(
        value=lambda x0, xT: xT[0],
        grad=lambda x0, xT: np.array([0.0, 0, 1, 0]),
        hess=lambda x0, xT: np.zeros((4, 4)),
    )
    prob = ps.ProblemDef(name="affine-only-2", n=2, l=0, m=1, d_eta=0, horizon=1.0,
                         fields=(f0, f1), cost=cost,
                         constraints=ps.EndpointConstraints.empty(2))
    jac = ps.elimination_jacobian(prob, np.array([0.5, 0.2]), np.zeros(0),
                                  np.array([0.1]), np.array([1.0, 0.5]))
    assert jac.shape == (1, 1)
