"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run pytest with -s to see them all).
The criterion-2 measurement is known to come up short on this problem: the
reduced residual map is exactly linear in the unknown initial costates, so
Gauss-Newton lands at the noise floor in one update and no iterate ever
falls inside the measurable error band; see the test body for the numbers.
"""

import time

import numpy as np
import pytest

import parshoot as ps
from parshoot.errors import InsufficientData
from parshoot.shooting import convergence_order, gauss_newton, make_shooting_map
from parshoot.ssc import (
    check_necessary,
    coercivity_check,
    goh_transform,
    multiplier_for,
    nominal_coefficients,
    propagate_linearized,
    second_variation_omega,
    omega_bar,
)

from conftest import make_zero_extremal

GRID_N = 1000
N_STARTS = 100
SEED = 42
RHO_GOLDEN_200 = 0.8777532618974876  # frozen by the two-grid oracle below


def _report(criterion, passed, detail):
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    return passed


@pytest.fixture(scope="module")
def multistart_batch():
    smap = make_shooting_map("ds-reduced")
    rng = np.random.default_rng(SEED)
    starts = rng.uniform(-1.0, 1.0, size=(N_STARTS, 2))
    begin = time.perf_counter()
    reports = [
        gauss_newton(smap, nu0, GRID_N, "implicit-euler",
                     tol=1e-10, max_iter=30, raise_on_failure=False)
        for nu0 in starts
    ]
    elapsed = time.perf_counter() - begin
    return reports, elapsed


def test_criterion_1_reduced_problem_convergence(multistart_batch):
    reports, elapsed = multistart_batch
    good = sum(
        1 for r in reports
        if r.converged and r.iterations <= 12
        and r.residual_norms[-1] <= 1e-10
        and np.linalg.norm(r.nu) <= 1e-8
    )
    passed = good == N_STARTS and elapsed <= 60.0
    assert _report(1, passed,
                   f"{good}/{N_STARTS} starts converged, wall clock {elapsed:.1f}s")


def test_criterion_2_quadratic_convergence_order(multistart_batch):
    reports, _ = multistart_batch
    estimates = []
    insufficient = 0
    for report in reports:
        try:
            estimates.append(convergence_order(report, report.nu))
        except InsufficientData:
            insufficient += 1
    if estimates:
        median = float(np.median(estimates))
        passed = median >= 1.7
        detail = (f"median order {median:.2f} from {len(estimates)} runs, "
                  f"{insufficient} without band iterates")
    else:
        median = None
        passed = False
        detail = (f"no measurable runs: all {insufficient} iterate sequences "
                  "jump the band [1e-8, 1e-2] in one update (linear residual)")
    assert _report(2, passed, detail)


def test_criterion_3_control_elimination_closed_form(ds):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(3)
        p = np.array([*rng.standard_normal(2), 1.0])
        u, v, _, _ = ps.eliminate_controls(ds, x, p)
        worst = max(worst, abs(u[0] + p[0] / 2), abs(v[0] - x[0]))
    passed = worst <= 1e-9
    assert _report(3, passed, f"worst deviation {worst:.2e}")


def test_criterion_4_curvature_engine_closed_forms(ds):
    rng = np.random.default_rng(SEED + 1)
    worst_hvdd = 0.0
    worst_jac = 0.0
    for _ in range(100):
        x = rng.standard_normal(3)
        u = rng.standard_normal(1)
        v = rng.standard_normal(1)
        p = np.array([*rng.standard_normal(2), 1.0])
        got = ps.hv_ddot(ds, x, u, v, p)[0]
        worst_hvdd = max(worst_hvdd, abs(got - (-2 * v[0] + 2 * x[0])))
        jac = ps.elimination_jacobian(ds, x, u, v, p)
        worst_jac = max(worst_jac, np.abs(jac - np.diag([2.0, 2.0])).max())
    passed = worst_hvdd <= 1e-9 and worst_jac <= 1e-8
    assert _report(4, passed,
                   f"worst hv_ddot dev {worst_hvdd:.2e}, worst Jacobian dev {worst_jac:.2e}")


def test_criterion_5_transform_identity(ds):
    sol = make_zero_extremal(2000)
    lam = multiplier_for(ds, sol)
    coeffs = nominal_coefficients(ds, sol, lam)
    rng = np.random.default_rng(SEED + 2)
    times = sol.times
    basis = np.stack([np.ones_like(times), times, np.sin(np.pi * times),
                      np.cos(2 * np.pi * times)])
    worst = 0.0
    for _ in range(50):
        ubar = (rng.standard_normal((1, 4)) @ basis).T
        vbar = (rng.standard_normal((1, 4)) @ basis).T
        d = propagate_linearized(ds, sol, rng.standard_normal(3), ubar, vbar,
                                 scheme="rk4", coeffs=coeffs)
        om = second_variation_omega(ds, sol, lam, d, coeffs=coeffs)
        ob = omega_bar(ds, sol, lam, goh_transform(d, sol, ds), coeffs=coeffs)
        worst = max(worst, abs(om - ob) / (1 + abs(om)))
    passed = worst <= 1e-6
    assert _report(5, passed, f"worst identity error {worst:.2e} over 50 directions")


def test_criterion_6_coercivity_two_grids(ds):
    rhos = {}
    for n in (200, 400):
        sol = make_zero_extremal(n)
        lam = multiplier_for(ds, sol)
        rhos[n] = coercivity_check(ds, sol, lam).rho_hat
    drift = abs(rhos[400] - rhos[200]) / abs(rhos[200])
    passed = (rhos[200] > 0 and rhos[400] > 0 and drift <= 0.10
              and abs(rhos[200] - RHO_GOLDEN_200) <= 1e-9)
    assert _report(6, passed,
                   f"rho200 {rhos[200]:.6f}, rho400 {rhos[400]:.6f}, drift {drift:.1%}")


def test_criterion_7_necessary_structure_and_margins(ds):
    sol = make_zero_extremal(200)
    lam = multiplier_for(ds, sol)
    necessary = check_necessary(ds, sol, lam)
    worst = max(necessary.huv_sup, necessary.v_sup, necessary.hu_sup, necessary.hvddot_sup,
                necessary.bracket_sup)
    lc = ps.check_legendre(ds, sol)
    passed = (worst <= 1e-12
              and abs(lc.huu_margin - 2.0) <= 1e-12
              and abs(lc.generalized_margin - 2.0) <= 1e-12)
    assert _report(7, passed,
                   f"worst residual {worst:.2e}, margins "
                   f"({lc.huu_margin}, {lc.generalized_margin})")


def test_criterion_8_numerical_hygiene(ds):
    from parshoot.shooting import shooting_jacobian

    smap = make_shooting_map("ds-reduced")
    j1 = shooting_jacobian(smap, np.zeros(2), GRID_N, "implicit-euler", step=1e-6)
    j2 = shooting_jacobian(smap, np.zeros(2), GRID_N, "implicit-euler", step=5e-7)
    richardson = float(np.abs(j1 - j2).max())

    x0 = np.zeros(3)
    p0 = np.array([1.0, 0.0, 1.0])
    ref = ps.propagate(ds, x0, p0, 2 ** 14, "rk4")
    zref = np.concatenate([ref.x[-1], ref.p[-1]])

    def err(n, scheme):
        t = ps.propagate(ds, x0, p0, n, scheme)
        return np.abs(np.concatenate([t.x[-1], t.p[-1]]) - zref).max()

    ie_order = float(np.log2(err(1000, "implicit-euler") / err(2000, "implicit-euler")))
    rk4_order = float(np.log2(err(64, "rk4") / err(128, "rk4")))
    drift = float(np.abs(ps.propagate(ds, x0, p0, GRID_N, "implicit-euler").p[:, 2] - 1.0).max())

    passed = (richardson <= 1e-6 and abs(ie_order - 1.0) <= 0.2
              and abs(rk4_order - 4.0) <= 0.5 and drift <= 1e-9)
    assert _report(8, passed,
                   f"Richardson {richardson:.2e}, orders ie {ie_order:.2f} / "
                   f"rk4 {rk4_order:.2f}, costate drift {drift:.1e}")
